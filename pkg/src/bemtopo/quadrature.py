"""Triangle quadrature layouts and closed-form weakly singular self-integrals."""
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import DegenerateTriangle


def _conical_rule(n=2):
    """n*n-point conical product rule on the reference triangle (0,0),(1,0),(0,1).

    Gauss-Jacobi in s (weight 1 - s) times Gauss-Legendre in t, mapped by
    (s, (1 - s) t). Exact for polynomials of degree 2n - 1; positive weights.
    """
    xs, ws = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    ws = ws / 4.0  # (1-x)/2 factor and dx = 2 ds
    xt, wt = roots_legendre(n)
    t = 0.5 * (xt + 1.0)
    wt = wt / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    bary = np.stack([1.0 - S.ravel(), S.ravel(), ((1.0 - S) * T).ravel()], axis=1)
    # barycentric (l0, l1, l2) with x = l1 e1 + l2 e2, l0 = 1 - l1 - l2
    bary[:, 0] = 1.0 - bary[:, 1] - bary[:, 2]
    return bary, 2.0 * W.ravel()  # weights relative to triangle area


def _split4(bary):
    """Barycentric sub-triangles of a 4-way midpoint split; each row is 3 corner barycentrics."""
    e = np.eye(3)
    m01, m12, m20 = (e[0] + e[1]) / 2, (e[1] + e[2]) / 2, (e[2] + e[0]) / 2
    subs = [(e[0], m01, m20), (m01, e[1], m12), (m20, m12, e[2]), (m12, m20, m01)]
    out = []
    for tri in bary:
        for s in subs:
            out.append(np.array([sum(s[k][c] * tri[c] for c in range(3)) for k in range(3)]))
    return out


def subdivided_rule(levels, n=2):
    """Barycentric points and area-relative weights after `levels` 4-way splits."""
    tris = [np.eye(3)]
    for _ in range(levels):
        tris = _split4(tris)
    base, bw = _conical_rule(n)
    pts, wts = [], []
    for corners in tris:
        pts.append(base @ corners)
        wts.append(bw / len(tris))
    return np.concatenate(pts), np.concatenate(wts)


RULE16 = subdivided_rule(1)
RULE64 = subdivided_rule(2)


@dataclass
class QuadratureLayout:
    """Flattened quadrature points with per-point triangle index and weight."""

    points: np.ndarray  # (n_tri * q, 3)
    weights: np.ndarray  # (n_tri * q,)
    normals: np.ndarray  # (n_tri * q, 3)
    group: np.ndarray  # (n_tri * q,) owning triangle
    per_triangle: int

    @property
    def n_points(self):
        return len(self.weights)


def build_quadrature(mesh, rule=RULE16, triangles=None):
    bary, w = rule
    tri = np.arange(mesh.n_triangles) if triangles is None else np.asarray(triangles)
    v = mesh.vertices[mesh.triangles[tri]]  # (nt, 3, 3)
    pts = np.einsum("qc,tcx->tqx", bary, v).reshape(-1, 3)
    wts = (mesh.areas[tri][:, None] * w[None, :]).ravel()
    q = len(w)
    return QuadratureLayout(
        points=pts,
        weights=wts,
        normals=np.repeat(mesh.normals[tri], q, axis=0),
        group=np.repeat(tri, q),
        per_triangle=q,
    )


def _edge_terms(x0, a, b):
    """Polar integrals over the sub-triangle (x0, a, b): returns (I0, I2).

    I0 = int R(theta) dtheta, I2 = int R(theta) rhat rhat^T dtheta.
    """
    t = b - a
    t /= np.linalg.norm(t)
    d = a - x0
    foot = d - (d @ t) * t
    h = np.linalg.norm(foot)
    f = foot / h
    pa = np.arctan2(d @ t, h)
    db = b - x0
    pb = np.arctan2(db @ t, h)

    def prim(p):
        s, c = np.sin(p), np.cos(p)
        at = np.arctanh(s)
        i0 = h * at
        i2 = h * (s * np.outer(f, f) + (at - s) * np.outer(t, t) - c * (np.outer(f, t) + np.outer(t, f)))
        return i0, i2

    i0b, i2b = prim(pb)
    i0a, i2a = prim(pa)
    return i0b - i0a, i2b - i2a


def singular_integral_U(vertices, material, point=None, scale=None):
    """Integral of kernel U over a flat triangle with the singular point in-plane.

    The point defaults to the centroid. Closed form via a fan of three
    sub-triangles and polar integration.
    """
    v = np.asarray(vertices, float)
    x0 = v.mean(axis=0) if point is None else np.asarray(point, float)
    area = 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0]))
    L = np.linalg.norm(v - v.mean(axis=0), axis=1).max() if scale is None else scale
    if area < 1e-14 * L * L or L == 0:
        raise DegenerateTriangle("triangle area below tolerance")
    I0 = 0.0
    I2 = np.zeros((3, 3))
    for k in range(3):
        i0, i2 = _edge_terms(x0, v[k], v[(k + 1) % 3])
        I0 += i0
        I2 += i2
    nu, G = material.nu, material.G
    return ((3.0 - 4.0 * nu) * I0 * np.eye(3) + I2) / (16.0 * np.pi * (1.0 - nu) * G)


def singular_integrals_U(mesh, material):
    """Self-integrals of U for every triangle at its centroid, shape (n_tri, 3, 3)."""
    v = mesh.vertices[mesh.triangles]
    return np.stack([singular_integral_U(tri, material) for tri in v])


def cpv_integral_P(vertices, material, point=None):
    """Cauchy principal value of kernel P over a flat triangle at an in-plane point.

    With the point in-plane only the antisymmetric (1-2nu)(h n^T - n h^T) term
    survives; the radial integral leaves J = int rhat ln R(theta) dtheta.
    """
    from scipy.integrate import quad

    v = np.asarray(vertices, float)
    x0 = v.mean(axis=0) if point is None else np.asarray(point, float)
    n = np.cross(v[1] - v[0], v[2] - v[0])
    n /= np.linalg.norm(n)
    J = np.zeros(3)
    for k in range(3):
        a, b = v[k], v[(k + 1) % 3]
        t = (b - a) / np.linalg.norm(b - a)
        d = a - x0
        foot = d - (d @ t) * t
        h = np.linalg.norm(foot)
        f = foot / h
        pa, pb = np.arctan2(d @ t, h), np.arctan2((b - x0) @ t, h)
        for comp, basis in ((0, f), (1, t)):
            fn = (lambda p: np.cos(p) * np.log(h / np.cos(p))) if comp == 0 else \
                 (lambda p: np.sin(p) * np.log(h / np.cos(p)))
            val, _ = quad(fn, pa, pb, epsabs=1e-12 * h, epsrel=1e-12, limit=200)
            J += val * basis
    nu = material.nu
    c = (1.0 - 2.0 * nu) / (8.0 * np.pi * (1.0 - nu))
    return c * (np.outer(J, n) - np.outer(n, J))
