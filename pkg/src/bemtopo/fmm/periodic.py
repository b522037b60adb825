"""Periodic summation over a cubic lattice of cell images.

The cell [0, L)^3 is the octree root. Its 26 nearest images are reached by
wrapping the interaction lists. Everything further away is folded into one
operator from the root upward density to the root downward density, built
by grouping images into 3 x 3 x 3 super cells level by level. The lattice
sum of the displacement kernel only converges for sources without net force,
and the result is the limit of growing cubic truncations.
"""
from __future__ import annotations

import numpy as np

from .. import _core
from ..errors import NonEquilibratedSources
from .base import SourceSet, kid, point_strengths
from .kifmm import FmmBackend, FmmPlan
from .operators import R_INNER, R_OUTER, get_bank, kernel_dense

FORCE_KINDS = ("U", "D")
_FAR: dict = {}


def _net_force_projector(ns):
    return np.eye(3 * ns) - np.kron(np.full((ns, ns), 1.0 / ns), np.eye(3))


def far_operator(bank, levels=3):
    """Map from root upward to root downward equivalent density for images
    outside the 3 x 3 x 3 block around the cell (scale free)."""
    key = (bank.order, bank.nu, bank.G, levels)
    if key in _FAR:
        return _FAR[key]
    S = bank.surface
    K = lambda t, s: kernel_dense(0, t, s, bank.nu, bank.G)  # noqa: E731
    r = np.arange(-1, 2)
    near = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    r = np.arange(-4, 5)
    shell = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    shell = shell[np.abs(shell).max(axis=1) >= 2]
    # aggregation of 27 copies into the super cell (child half-width units)
    A = 3.0 * bank.uc2ue @ sum(K(3 * R_OUTER * S, 2 * m + R_INNER * S) for m in near)
    # shell of super cells around the centre copy, seen on its check surface
    E = bank.dc2de @ sum(K(R_INNER * S, 2 * m + R_INNER * S) for m in shell)
    # downward density of a super cell to its centre copy
    D3 = bank.dc2de @ K(R_INNER * S, 3 * R_OUTER * S)
    Q = _net_force_projector(bank.n_surf)
    QA = Q @ A
    P = Q.copy()
    R = np.eye(len(Q))
    F = np.zeros_like(Q)
    prev = F
    for _ in range(levels):
        prev = F.copy()
        F += R @ E @ P
        P = QA @ P
        R = R @ D3
    # truncation error falls like 1/R^2 and each level triples R
    F = (9.0 * F - prev) / 8.0
    _FAR[key] = F
    return F


class PeriodicFmmPlan(FmmPlan):
    def __init__(self, backend, targets, sources: SourceSet, output):
        L = backend.period
        wrapped = SourceSet(np.mod(sources.points, L), sources.normals, sources.weights,
                            sources.group, sources.n_groups)
        super().__init__(backend, np.mod(np.asarray(targets, float).reshape(-1, 3), L), wrapped, output)
        self.far = far_operator(self.bank, backend.levels)
        self.root_slot = self.up_slot[0] if self.up_slot[0] >= 0 else None

    def check_sources(self, point_str):
        for kind in FORCE_KINDS:
            s = point_str.get(kind)
            if s is None:
                continue
            net = np.abs(s.sum(axis=0)).max()
            if net > self.backend.equilibrium_tol * max(np.abs(s).sum(), 1e-300):
                raise NonEquilibratedSources(f"net {kind} source strength {net:.3e} in a periodic sum")

    def root_far_field(self, phi):
        if self.root_slot is None or self.dn_slot[0] < 0:
            return None
        return self.far @ phi[self.root_slot]


class PeriodicFmmBackend(FmmBackend):
    """KIFMM over the cubic lattice with cell [0, period)^3."""

    periodic = True
    name = "fmm-periodic"
    plan_class = PeriodicFmmPlan

    def __init__(self, material, period=1.0, order=8, leaf_size=256, tol=None, eps=1e-14,
                 levels=3, equilibrium_tol=1e-8):
        super().__init__(material, order, leaf_size, tol, eps)
        if not period > 0:
            raise ValueError("period must be positive")
        self.period = float(period)
        self.levels = int(levels)
        self.equilibrium_tol = equilibrium_tol

    def root_box(self, sources, targets):
        return np.zeros(3), self.period


def fmm_sum_periodic(kind, sources, targets, strengths, material, period=1.0, normals=None,
                     order=8, leaf_size=256, tol=None):
    """Lattice sum over all images of the cell [0, period)^3."""
    src = SourceSet(sources, normals)
    output = "disp" if kind in ("U", "P") else "stress"
    backend = PeriodicFmmBackend(material, period, order, leaf_size, tol)
    return backend.plan(targets, src, output).apply({kind: strengths})


def cubic_image_sum(kind, sources, targets, strengths, material, period, radius, normals=None):
    """Direct sum over images n with max|n| <= radius."""
    src = SourceSet(sources, normals)
    s = point_strengths(src, strengths)
    trg = np.ascontiguousarray(targets, float).reshape(-1, 3)
    nd = 3 if kind in ("U", "P") else 6
    out = np.zeros((len(trg), nd))
    r = np.arange(-radius, radius + 1)
    for i in r:
        shift = np.stack(np.meshgrid([i], r, r, indexing="ij"), axis=-1).reshape(-1, 1, 3) * period
        pts = (src.points[None] + shift).reshape(-1, 3)
        nrm = np.tile(src.normals, (len(shift), 1))
        st = np.tile(s, (len(shift), 1))
        _core.apply_kernel(kid(kind), pts, nrm, st, trg, material.nu, material.G, 1e-14, out)
    return out


def lattice_direct_sum(kind, sources, targets, strengths, material, period=1.0, normals=None,
                       radii=(4, 8, 16, 32)):
    """Brute-force lattice sum, extrapolated in the truncation radius.

    Cubic truncations of a zero-net-force lattice sum have an error series in
    1/R^2, 1/R^3, ...; radii doubling each step are combined by repeated
    Richardson extrapolation.
    """
    vals = [cubic_image_sum(kind, sources, targets, strengths, material, period, R, normals) for R in radii]
    p = 2
    while len(vals) > 1:
        f = 2.0 ** p
        vals = [(f * b - a) / (f - 1.0) for a, b in zip(vals[:-1], vals[1:])]
        p += 1
    return vals[0]
