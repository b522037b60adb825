"""Restarted GMRES for matrix-free operators."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MaxIterationsExceeded, NumericalBreakdown


@dataclass
class SolverConfig:
    tolerance: float = 1e-4
    restart: int = 100
    max_iterations: int = 1000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


def _givens(a, b):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_solve(matvec, rhs, config: SolverConfig | None = None, x0=None, reorth_tol=1e-8):
    """Solve matvec(x) = rhs; returns (x, history of relative residual norms).

    Modified Gram-Schmidt Arnoldi, with a second orthogonalization pass when
    the first leaves a component above reorth_tol. No preconditioner.
    """
    cfg = config or SolverConfig()
    b = np.asarray(rhs, float).ravel()
    n = b.size
    bnorm = np.linalg.norm(b)
    if not np.all(np.isfinite(b)):
        raise ValueError("rhs must be finite")
    x = np.zeros(n) if x0 is None else np.array(x0, float).ravel()
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    r = b - matvec(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    total = 0
    m = cfg.restart
    while True:
        if history[-1] <= cfg.tolerance:
            return x, history
        if total >= cfg.max_iterations:
            raise MaxIterationsExceeded(x, history)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        breakdown = False
        for j in range(m):
            w = np.array(matvec(V[j]), float).ravel()  # copy: matvec may return its input
            total += 1
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            c = V[: j + 1] @ w
            if np.abs(c).max() > reorth_tol * max(np.linalg.norm(w), 1e-300):
                w -= c @ V[: j + 1]
                H[: j + 1, j] += c
            hn = np.linalg.norm(w)
            H[j + 1, j] = hn
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if hn <= 1e-14 * max(wnorm0, 1e-300):
                breakdown = True
                break
            V[j + 1] = w / hn
            if history[-1] <= cfg.tolerance or total >= cfg.max_iterations:
                break
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        x = x + y @ V[:k]
        if breakdown and history[-1] > cfg.tolerance:
            raise NumericalBreakdown(x, history)
        if history[-1] <= cfg.tolerance:
            return x, history
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        history[-1] = beta / bnorm
        if beta == 0.0:
            return x, history


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for i, h in enumerate(history):
            w.writerow([i, f"{h:.6e}"])
