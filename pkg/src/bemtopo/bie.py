"""Collocation discretization of the displacement boundary integral equation.

For a collocation point xi on the boundary of the material region:

    1/2 u(xi) + int P(xi, y) u(y) dS_y - int U(xi, y) t(y) dS_y = 0

with piecewise-constant u and t per triangle. The far part of both integrals
goes through a summation backend (pass 1); a sparse block correction swaps
near and self contributions for upsampled, analytic and rigid-body-identity
values (pass 2).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.spatial import cKDTree

from . import _core
from .errors import NoSupportingTriangles, OpenSurface
from .fmm.base import SourceSet
from .quadrature import RULE16, RULE64, build_quadrature, singular_integrals_U, subdivided_rule

log = logging.getLogger(__name__)


@dataclass
class BoundaryConditions:
    """Per-triangle Dirichlet (displacement) or Neumann (traction) data."""

    dirichlet: np.ndarray
    values: np.ndarray

    @classmethod
    def traction_free(cls, n_triangles):
        return cls(np.zeros(n_triangles, bool), np.zeros((n_triangles, 3)))

    def __post_init__(self):
        self.dirichlet = np.asarray(self.dirichlet, bool)
        self.values = np.asarray(self.values, float).reshape(len(self.dirichlet), 3)

    def set_dirichlet(self, mask, displacement):
        self.dirichlet[mask] = True
        self.values[mask] = displacement

    def set_neumann(self, mask, traction):
        self.dirichlet[mask] = False
        self.values[mask] = traction

    def add_traction(self, traction):
        neu = ~self.dirichlet
        self.values[neu] += np.asarray(traction)[neu]

    @property
    def pure_neumann(self):
        return not self.dirichlet.any()


@dataclass
class LinearSystemMap:
    """Routing between (u, t) per triangle and the unknown/known vectors x, y."""

    dirichlet: np.ndarray

    @property
    def n_dof(self):
        return 3 * len(self.dirichlet)

    def unknown_parts(self, x):
        """x -> (u part, t part): u unknown on Neumann triangles, t on Dirichlet."""
        x = np.asarray(x).reshape(-1, 3)
        d = self.dirichlet[:, None]
        return np.where(d, 0.0, x), np.where(d, x, 0.0)

    def known_parts(self, y):
        y = np.asarray(y).reshape(-1, 3)
        d = self.dirichlet[:, None]
        return np.where(d, y, 0.0), np.where(d, 0.0, y)

    def combine(self, x, y):
        """Full (u, t) fields from unknowns x and knowns y."""
        ux, tx = self.unknown_parts(x)
        uy, ty = self.known_parts(y)
        return ux + uy, tx + ty


@dataclass
class BoundarySolution:
    displacement: np.ndarray  # (n_tri, 3)
    traction: np.ndarray  # (n_tri, 3)
    residuals: list = field(default_factory=list)

    @property
    def iterations(self):
        return max(len(self.residuals) - 1, 0)


def near_pairs(targets, mesh, factor=2.0, period=None, include_self=True):
    """(target, triangle) pairs with |target - centroid| < factor * diameter.

    With a period the distance uses the minimum image. Returns (rows, cols, shift)
    where shift is the lattice translation to add to the triangle geometry.
    """
    diam = mesh.diameters()
    cen = mesh.centroids
    targets = np.asarray(targets, float).reshape(-1, 3)
    if period is None:
        tree = cKDTree(targets)
        lists = tree.query_ball_point(cen, factor * diam)
    else:
        tree = cKDTree(np.mod(targets, period), boxsize=period)
        lists = tree.query_ball_point(np.mod(cen, period), factor * diam)
    cols = np.repeat(np.arange(len(cen)), [len(x) for x in lists])
    rows = np.fromiter((i for x in lists for i in x), np.int64, count=len(cols))
    if include_self and len(targets) == len(cen):
        have = rows == cols
        missing = np.setdiff1d(np.arange(len(cen)), cols[have])
        rows = np.concatenate([rows, missing])
        cols = np.concatenate([cols, missing])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    shift = np.zeros((len(rows), 3))
    if period is not None:
        d = targets[rows] - cen[cols]
        shift = period * np.round(d / period)
    return rows, cols, shift


def pair_blocks(kind, targets, rows, cols, shift, layout, material, eps):
    """Blocks sum_q w_q K(target_row - (y_q + shift)) over the layout points of triangle col."""
    q = layout.per_triangle
    n = len(rows)
    trg = np.ascontiguousarray(np.asarray(targets)[rows] - shift)
    tptr = np.arange(n + 1, dtype=np.int64)
    tidx = np.arange(n, dtype=np.int64)
    # layout built for all triangles in order, so triangle k owns points k*q .. k*q+q-1
    sidx = (cols[:, None] * q + np.arange(q)[None, :]).ravel().astype(np.int64)
    sptr = np.arange(n + 1, dtype=np.int64) * q
    _r, _c, blocks = _core.folded_blocks(
        kind, trg, tptr, tidx, layout.points, layout.normals, layout.weights,
        layout.group, sptr, sidx, int(layout.group.max()) + 1, material.nu, material.G, eps,
        np.zeros((n, 3)))
    return blocks


def block_matrix(rows, cols, blocks, shape):
    """Sparse matrix from 3x3 (or nd x 3) blocks at block positions (rows, cols)."""
    nd = blocks.shape[1]
    r = (rows[:, None, None] * nd + np.arange(nd)[None, :, None]) + 0 * np.arange(3)[None, None, :]
    c = (cols[:, None, None] * 3 + np.arange(3)[None, None, :]) + 0 * np.arange(nd)[None, :, None]
    return sps.csr_matrix((blocks.ravel(), (r.ravel(), c.ravel())), shape=(shape[0] * nd, shape[1] * 3))


class BoundaryOperator:
    """Matrix-free collocation operator full(u, t) = 1/2 u + P u - U t.

    free_term: the value of (CPV) int_Gamma P dS at a collocation point, used
    to build the self blocks through the rigid-body identity. For bounded
    regions it is -1/2 I; periodic cells supply their own.
    """

    def __init__(self, mesh, material, backend, near_factor=2.0, free_term=None,
                 near_rule=RULE64, eps=None, cache_near=True):
        self.period = getattr(backend, "period", None)
        if not mesh.is_closed(self.period):
            raise OpenSurface("boundary mesh is not closed")
        self.mesh = mesh
        self.material = material
        self.backend = backend
        scale = float(np.ptp(mesh.vertices, axis=0).max())
        self.eps = 1e-14 * scale if eps is None else eps
        self.layout = build_quadrature(mesh, RULE16)
        self.sources = SourceSet(self.layout.points, self.layout.normals, self.layout.weights,
                                 self.layout.group, mesh.n_triangles)
        self.plan = backend.plan(mesh.centroids, self.sources, "disp")
        if cache_near and hasattr(self.plan, "cache_near"):
            self.plan.cache_near(("U", "P"))
        self._build_corrections(near_factor, near_rule)
        ft = -0.5 * np.eye(3) if free_term is None else np.asarray(free_term, float)
        self._set_self_blocks(ft)

    def _build_corrections(self, factor, near_rule):
        mesh, mat = self.mesh, self.material
        n = mesh.n_triangles
        rows, cols, shift = near_pairs(mesh.centroids, mesh, factor, self.period)
        fine = build_quadrature(mesh, near_rule)
        self_pair = rows == cols
        self.near_rows, self.near_cols = rows, cols
        mats = {}
        for name, kind in (("U", _core.KIND_U), ("P", _core.KIND_P)):
            f = pair_blocks(kind, mesh.centroids, rows, cols, shift, fine, mat, self.eps)
            c = pair_blocks(kind, mesh.centroids, rows, cols, shift, self.layout, mat, self.eps)
            corr = f - c
            if name == "U":
                corr[self_pair] = singular_integrals_U(mesh, mat) - c[self_pair]
            else:
                corr[self_pair] = -c[self_pair]
            mats[name] = (corr, rows, cols)
        self._corr = mats
        self.C_U = block_matrix(rows, cols, mats["U"][0], (n, n))
        self._self_idx = np.flatnonzero(self_pair)

    def _set_self_blocks(self, free_term):
        n = self.mesh.n_triangles
        ones = np.zeros((n, 3))
        off = np.zeros((n, 3, 3))
        corr, rows, cols = self._corr["P"]
        C_P0 = block_matrix(rows, cols, corr, (n, n))
        for j in range(3):
            ones[:] = 0.0
            ones[:, j] = 1.0
            v = self.plan.apply({"P": ones}) + (C_P0 @ ones.ravel()).reshape(n, 3)
            off[:, :, j] = v
        ft = np.broadcast_to(free_term, (n, 3, 3))
        self.self_P = ft - off
        corr = corr.copy()
        corr[self._self_idx] += self.self_P[rows[self._self_idx]]
        self.C_P = block_matrix(rows, cols, corr, (n, n))

    def full(self, u, t):
        """1/2 u + P u - U t for per-triangle fields u, t of shape (n, 3)."""
        n = self.mesh.n_triangles
        u = np.asarray(u, float).reshape(n, 3)
        t = np.asarray(t, float).reshape(n, 3)
        has_u, has_t = bool(np.any(u)), bool(np.any(t))
        strengths = {}
        if has_u:
            strengths["P"] = u
        if has_t:
            strengths["U"] = -t
        out = self.plan.apply(strengths) if strengths else np.zeros((n, 3))
        out = out.ravel()
        if has_u:
            out += 0.5 * u.ravel() + self.C_P @ u.ravel()
        if has_t:
            out -= self.C_U @ t.ravel()
        return out


class BieSystem:
    """Rearranged system A x = B y for given boundary conditions."""

    def __init__(self, operator: BoundaryOperator, bc: BoundaryConditions):
        self.op = operator
        self.bc = bc
        self.map = LinearSystemMap(bc.dirichlet)
        self.n_calls = 0

    @property
    def n_dof(self):
        return self.map.n_dof

    def matvec_A(self, x):
        self.n_calls += 1
        u, t = self.map.unknown_parts(x)
        return self.op.full(u, t)

    def matvec_B(self, y):
        u, t = self.map.known_parts(y)
        return -self.op.full(u, t)

    def rhs(self):
        return self.matvec_B(self.bc.values.ravel())

    def assemble(self, x):
        u, t = self.map.combine(x, self.bc.values.ravel())
        return u, t


def rigid_modes(points, weights=None):
    """Orthonormal (weighted) basis of the 6 rigid-body modes sampled at points, shape (3n, 6)."""
    p = np.asarray(points, float)
    w = np.ones(len(p)) if weights is None else np.asarray(weights, float)
    c = (w[:, None] * p).sum(0) / w.sum()
    q = p - c
    modes = np.zeros((len(p), 3, 6))
    for a in range(3):
        modes[:, a, a] = 1.0
    # rotations e_a x q
    modes[:, :, 3] = np.stack([0 * q[:, 0], -q[:, 2], q[:, 1]], 1)
    modes[:, :, 4] = np.stack([q[:, 2], 0 * q[:, 0], -q[:, 0]], 1)
    modes[:, :, 5] = np.stack([-q[:, 1], q[:, 0], 0 * q[:, 0]], 1)
    M = modes.reshape(-1, 6) * np.sqrt(np.repeat(w, 3))[:, None]
    Q, _ = np.linalg.qr(M)
    return Q / np.sqrt(np.repeat(w, 3))[:, None], np.sqrt(np.repeat(w, 3))


def remove_rigid_motion(u, points, weights):
    """Subtract the area-weighted best-fit rigid motion from per-triangle displacements."""
    Q, sw = rigid_modes(points, weights)
    flat = np.asarray(u, float).ravel()
    W = sw**2
    coef = Q.T @ (W * flat)
    return (flat - Q @ coef).reshape(-1, 3)


def net_force_and_moment(mesh, traction, about=None):
    area = mesh.areas[:, None]
    f = traction * area
    c = mesh.centroids.mean(axis=0) if about is None else np.asarray(about)
    return f.sum(0), np.cross(mesh.centroids - c, f).sum(0)


def check_equilibrium(mesh, traction, rtol=1e-8):
    """Warn and return False if a traction field carries net force or moment."""
    F, M = net_force_and_moment(mesh, traction)
    scale = np.abs(traction * mesh.areas[:, None]).sum() + 1e-300
    L = float(np.ptp(mesh.vertices, axis=0).max())
    ok = np.abs(F).max() <= rtol * scale and np.abs(M).max() <= rtol * scale * L
    if not ok:
        warnings.warn(f"pure-Neumann load not self-equilibrated: F={F}, M={M}", stacklevel=2)
    return ok


def apply_concentrated_forces(forces, mesh, radius=None, mask=None):
    """Spread point forces as uniform tractions over triangles with centroid within radius.

    forces: iterable of (point, vector). Returns per-triangle tractions (n, 3);
    sum(traction * area) equals the sum of the forces.
    """
    radius = mesh.spacing if radius is None else radius
    out = np.zeros((mesh.n_triangles, 3))
    tree = cKDTree(mesh.centroids)
    for point, vec in forces:
        idx = np.array(tree.query_ball_point(np.asarray(point, float), radius * (1 + 1e-12)), int)
        if mask is not None and len(idx):
            idx = idx[np.asarray(mask)[idx]]
        if len(idx) == 0:
            raise NoSupportingTriangles(f"no boundary triangle within {radius:g} of {point}")
        out[idx] += np.asarray(vec, float) / mesh.areas[idx].sum()
    return out


def interior_stress(operator: BoundaryOperator, displacement, traction, points, backend=None,
                    near_factor=2.0, near_levels=3):
    """Stress (Voigt, shape (n, 6)) at interior points from the boundary solution.

    sigma(p) = sum D t - sum S u, with upsampled quadrature for triangles
    within near_factor diameters of a point.
    """
    mesh, mat = operator.mesh, operator.material
    backend = operator.backend if backend is None else backend
    points = np.ascontiguousarray(points, float).reshape(-1, 3)
    u = np.asarray(displacement, float).reshape(-1, 3)
    t = np.asarray(traction, float).reshape(-1, 3)
    plan = backend.plan(points, operator.sources, "stress")
    strengths = {}
    if np.any(t):
        strengths["D"] = t
    if np.any(u):
        strengths["S"] = -u
    out = plan.apply(strengths) if strengths else np.zeros((len(points), 6))
    if not strengths:
        return out
    rows, cols, shift = near_pairs(points, mesh, near_factor, operator.period, include_self=False)
    if len(rows):
        fine = build_quadrature(mesh, subdivided_rule(near_levels))
        for kind, val in ((_core.KIND_D, t), (_core.KIND_S, -u)):
            if not np.any(val):
                continue
            f = pair_blocks(kind, points, rows, cols, shift, fine, mat, operator.eps)
            c = pair_blocks(kind, points, rows, cols, shift, operator.layout, mat, operator.eps)
            contrib = np.einsum("pdk,pk->pd", f - c, val[cols])
            np.add.at(out, rows, contrib)
    return out
