"""Kelvin fundamental solutions, isotropic constitutive law, topological derivative.

Convention: r = target - source, h = r / |r|, n is the unit normal at the source.
Stress-like quantities are stored as 3x3 symmetric arrays in the public API and
as Voigt 6-vectors (xx, yy, zz, yz, xz, xy) inside the summation machinery.
"""
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import CoincidentPoints

KINDS = {"U": _core.KIND_U, "P": _core.KIND_P, "D": _core.KIND_D, "S": _core.KIND_S}
VOIGT = np.array([[0, 0], [1, 1], [2, 2], [1, 2], [0, 2], [0, 1]])


@dataclass(frozen=True)
class Material:
    """Isotropic linear-elastic material."""

    young_modulus: float = 1.0
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError("young_modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (-1, 0.5)")

    @property
    def E(self):
        return self.young_modulus

    @property
    def nu(self):
        return self.poisson_ratio

    @property
    def G(self):
        return self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))

    @property
    def K(self):
        return self.young_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))

    @property
    def lame(self):
        nu, E = self.poisson_ratio, self.young_modulus
        return E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))

    def stiffness_voigt(self):
        """6x6 stiffness with engineering shear strains."""
        lam, G = self.lame, self.G
        C = np.zeros((6, 6))
        C[:3, :3] = lam
        C[np.arange(3), np.arange(3)] += 2.0 * G
        C[np.arange(3, 6), np.arange(3, 6)] = G
        return C

    @classmethod
    def from_shear(cls, G, nu):
        return cls(2.0 * G * (1.0 + nu), nu)


def _pair_args(source, target, normal, eps):
    s = np.asarray(source, float).reshape(1, 3)
    t = np.asarray(target, float).reshape(1, 3)
    n = np.zeros((1, 3)) if normal is None else np.asarray(normal, float).reshape(1, 3)
    if np.linalg.norm(t - s) < eps:
        raise CoincidentPoints(f"source and target closer than {eps:g}")
    return s, t, n


def kernel_matrix(kind, sources, targets, material, normals=None, eps=1e-14):
    """Dense kernel blocks of shape (n_targets, n_sources, nd, 3).

    Pairs closer than eps contribute zero blocks.
    """
    k = KINDS[kind] if isinstance(kind, str) else kind
    src = np.ascontiguousarray(sources, float).reshape(-1, 3)
    trg = np.ascontiguousarray(targets, float).reshape(-1, 3)
    nrm = np.zeros_like(src) if normals is None else np.ascontiguousarray(normals, float).reshape(-1, 3)
    return _core.kernel_blocks(k, src, nrm, trg, material.nu, material.G, eps)


def _voigt_to_tensor(blk):
    # blk: (6, 3) -> (3, 3, 3) indexed [k, i, j]
    out = np.empty((3, 3, 3))
    for v, (i, j) in enumerate(VOIGT):
        out[:, i, j] = blk[v]
        out[:, j, i] = blk[v]
    return out


def kernel_U(source, target, material, eps=1e-14):
    s, t, n = _pair_args(source, target, None, eps)
    return kernel_matrix("U", s, t, material, n, eps)[0, 0]


def kernel_P(source, source_normal, target, material, eps=1e-14):
    s, t, n = _pair_args(source, target, source_normal, eps)
    return kernel_matrix("P", s, t, material, n, eps)[0, 0]


def kernel_D(field_point, source, material, eps=1e-14):
    """D[k, i, j]: stress sigma_ij at field_point from a unit force e_k at source."""
    s, t, n = _pair_args(source, field_point, None, eps)
    return _voigt_to_tensor(kernel_matrix("D", s, t, material, n, eps)[0, 0])


def kernel_S(field_point, source, source_normal, material, eps=1e-14):
    """S[k, i, j]: stress from a unit displacement-density e_k on a surface with normal n."""
    s, t, n = _pair_args(source, field_point, source_normal, eps)
    return _voigt_to_tensor(kernel_matrix("S", s, t, material, n, eps)[0, 0])


def as_tensor(sigma):
    """Accept (..., 3, 3) tensors or (..., 6) Voigt vectors; return (..., 3, 3)."""
    sigma = np.asarray(sigma, float)
    if sigma.shape[-2:] == (3, 3):
        return sigma
    if sigma.shape[-1] != 6:
        raise ValueError("stress must be (...,3,3) or (...,6)")
    out = np.empty(sigma.shape[:-1] + (3, 3))
    for v, (i, j) in enumerate(VOIGT):
        out[..., i, j] = sigma[..., v]
        out[..., j, i] = sigma[..., v]
    return out


def topological_derivative(sigma, material):
    """Topological derivative of compliance for a spherical cavity.

    3(1-nu) / (4E(7-5nu)) * [10(1+nu) s:s - (1+5nu) (tr s)^2]
    """
    s = as_tensor(sigma)
    nu, E = material.nu, material.E
    ss = np.einsum("...ij,...ij->...", s, s)
    tr = np.trace(s, axis1=-2, axis2=-1)
    return 3.0 * (1.0 - nu) / (4.0 * E * (7.0 - 5.0 * nu)) * (
        10.0 * (1.0 + nu) * ss - (1.0 + 5.0 * nu) * tr**2)


def stress_to_strain(sigma, material):
    s = as_tensor(sigma)
    nu, E = material.nu, material.E
    tr = np.trace(s, axis1=-2, axis2=-1)
    eye = np.eye(3)
    return ((1.0 + nu) * s - nu * tr[..., None, None] * eye) / E


def strain_to_stress(eps, material):
    e = np.asarray(eps, float)
    tr = np.trace(e, axis1=-2, axis2=-1)
    return 2.0 * material.G * e + material.lame * tr[..., None, None] * np.eye(3)


def strain_energy_density(sigma, material):
    s = as_tensor(sigma)
    return 0.5 * np.einsum("...ij,...ij->...", s, stress_to_strain(s, material))
