"""Translation operators on cube equivalent/check surfaces.

All operators are built once per (order, material) at unit half-width and
reused at every level: the displacement kernel is homogeneous of degree -1,
so check-to-equivalent pseudo-inverses scale with the box half-width while
M2M, L2L and the combined M2L maps are scale free.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.fft as sp_fft

from .. import _core

log = logging.getLogger(__name__)

R_INNER = 1.05
R_OUTER = 2.95

_BANKS: dict = {}


def surface_grid(order):
    """Points of an order x order x order grid on the surface of [-1, 1]^3."""
    g = np.linspace(-1.0, 1.0, order)
    P = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    return np.ascontiguousarray(P[(np.abs(P) == 1.0).any(axis=1)])


def kernel_dense(kind, trg, src, nu, G, nrm=None):
    """Dense (nt*nd, ns*3) kernel matrix."""
    src = np.ascontiguousarray(src, float)
    nrm = np.zeros_like(src) if nrm is None else np.ascontiguousarray(nrm, float)
    b = _core.kernel_blocks(kind, src, nrm, np.ascontiguousarray(trg, float), nu, G, 0.0)
    nt, ns, nd, _ = b.shape
    return b.transpose(0, 2, 1, 3).reshape(nt * nd, ns * 3)


def pinv(A, rcond=1e-10):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    k = int((s > rcond * s[0]).sum())
    return (Vt[:k].T / s[:k]) @ U[:, :k].T


def m2l_offsets():
    r = np.arange(-3, 4)
    o = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return o[np.abs(o).max(axis=1) >= 2]


def offset_index(o):
    o = np.asarray(o) + 3
    return (o[..., 0] * 7 + o[..., 1]) * 7 + o[..., 2]


CHILD_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)]) - 0.5


class OperatorBank:
    """Precomputed operators for one (order, nu, G)."""

    def __init__(self, order, nu, G, rcond=1e-10):
        self.order = order
        self.nu = nu
        self.G = G
        S = surface_grid(order)
        self.surface = S
        self.n_surf = len(S)
        K = lambda t, s: kernel_dense(0, t, s, nu, G)  # noqa: E731
        self.uc2ue = pinv(K(R_OUTER * S, R_INNER * S), rcond)
        self.dc2de = pinv(K(R_INNER * S, R_OUTER * S), rcond)
        self.m2m = np.stack([self.uc2ue @ K(R_OUTER * S, c + 0.5 * R_INNER * S) for c in CHILD_OFFSETS])
        self.l2l = np.stack([0.5 * self.dc2de @ K(c + 0.5 * R_INNER * S, R_OUTER * S) for c in CHILD_OFFSETS])
        self._build_m2l()

    def _build_m2l(self, tol=None):
        """FFT tables of the M2L convolution kernel for every V-list offset.

        Upward-equivalent and downward-check grids share the spacing
        h = 2 R_INNER / (order - 1), so check(i) = sum_j K(-2 o + (i - j) h) phi(j)
        is a 3D convolution, done circularly on M = 2 * order - 1 points per axis
        (the smallest size free of wrap-around).
        """
        p = self.order
        M = 2 * p - 1
        h = 2.0 * R_INNER / (p - 1)
        d = np.arange(-(p - 1), p)
        D = np.stack(np.meshgrid(d, d, d, indexing="ij"), axis=-1).reshape(-1, 3)
        circ = np.mod(D, M)
        offs = m2l_offsets()
        F = M * M * (M // 2 + 1)
        tables = np.zeros((343, F, 9), complex)
        zero = np.zeros((1, 3))
        for o in offs:
            pts = -2.0 * o + D * h
            blk = _core.kernel_blocks(0, zero, zero, np.ascontiguousarray(pts), self.nu, self.G, 0.0)[:, 0]
            grid = np.zeros((9, M, M, M))
            grid[:, circ[:, 0], circ[:, 1], circ[:, 2]] = blk.reshape(-1, 9).T
            tables[offset_index(o)] = sp_fft.rfftn(grid, axes=(1, 2, 3)).reshape(9, F).T
        self.m2l_hat = tables
        g = np.round((self.surface + 1.0) / 2.0 * (p - 1)).astype(np.int64)
        self.surf_flat = (g[:, 0] * M + g[:, 1]) * M + g[:, 2]
        self.fft_size = M

    def arrays(self):
        return {k: v for k, v in self.__dict__.items() if isinstance(v, np.ndarray)}


def get_bank(order, nu, G):
    """Operator bank for (order, nu, G), built once per process."""
    key = (int(order), float(nu), float(G))
    bank = _BANKS.get(key)
    if bank is None:
        log.info("building FMM operators for order %d", order)
        bank = _BANKS[key] = OperatorBank(*key)
    return bank
