"""Periodic unit cell: free term of the lattice double layer, bounds and effective bulk modulus."""
from __future__ import annotations

import functools
import math

import numpy as np
from scipy.integrate import dblquad


@functools.lru_cache(maxsize=None)
def face_solid_angle_moments():
    """(I_par, I_perp): integrals of h_a^2 and h_b^2 over the solid angle subtended
    by the two faces of a unit cube normal to axis a, seen from its centre
    (h the unit direction, b an axis in the face). I_par + 2 I_perp = 4 pi / 3."""
    d = 0.5

    def face(f):
        return 2.0 * dblquad(f, -0.5, 0.5, -0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]

    i_par = face(lambda z, y: d**3 / (d * d + y * y + z * z) ** 2.5)
    i_perp = face(lambda z, y: d * y * y / (d * d + y * y + z * z) ** 2.5)
    return i_par, i_perp


def periodic_free_term(occupancy, material):
    """Correction F so that the CPV of the lattice-summed double layer is -1/2 I - F.

    Material crossing a cell face leaves the boundary inside one cell open,
    so a constant displacement is no longer annihilated. Each pair of opposite
    cell faces contributes its mean material fraction times the face-pair
    integral T_a of the traction kernel over directions. A cavity that touches
    no cell face gives F = -I, the bounded-domain value.
    """
    occ = np.asarray(occupancy, bool)
    nu = material.nu
    i_par, i_perp = face_solid_angle_moments()
    c = -1.0 / (8.0 * math.pi * (1.0 - nu))
    base = (1.0 - 2.0 * nu) * 4.0 * math.pi / 3.0
    t_par, t_perp = c * (base + 3.0 * i_par), c * (base + 3.0 * i_perp)
    F = np.zeros((3, 3))
    for a in range(3):
        phi = 0.5 * (np.take(occ, 0, axis=a).mean() + np.take(occ, -1, axis=a).mean())
        T = np.full(3, t_perp)
        T[a] = t_par
        F += phi * np.diag(T)
    return F


def hs_upper_bound(material, volume_fraction):
    """Upper bound on the bulk modulus of a material/void composite.

    K_HS = 4 G phi K / (4 G + 3 K (1 - phi)); equals K at phi = 1 and 0 at phi = 0.
    """
    phi = float(volume_fraction)
    if not 0.0 <= phi <= 1.0:
        raise ValueError("volume fraction must lie in [0, 1]")
    K, G = material.K, material.G
    return 4.0 * G * phi * K / (4.0 * G + 3.0 * K * (1.0 - phi))


def macro_volumetric_strain(mean_stress, material_fraction, normal_flux, material, hydrostatic, volume):
    """Cell-average volumetric strain of the superposed field.

    Material contributes tr(sigma) / (3K) per unit volume; the void
    contributes the homogeneous part (1 - alpha) p / K plus the fluctuation
    term -(1/V) sum u.n dS over the material boundary (normals pointing
    into the void).
    """
    K = material.K
    return (mean_stress + (1.0 - material_fraction) * hydrostatic) / K - normal_flux / volume


def effective_bulk_modulus(mean_stress, volumetric_strain):
    """K_eff from energy equivalence: Psi = V s e / 2 and K_eff = V s^2 / (2 Psi) = s / e."""
    if volumetric_strain <= 0:
        raise ValueError("volumetric strain must be positive")
    return mean_stress / volumetric_strain


def dilute_bulk_modulus(material, void_fraction):
    """First-order estimate for a dilute dispersion of spherical voids."""
    nu = material.nu
    return material.K * (1.0 - void_fraction * 3.0 * (1.0 - nu) / (2.0 * (1.0 - 2.0 * nu)))


def sphere_occupancy(n, radius, center=None):
    """n^3 unit-cell occupancy with a spherical void (radius in cell units)."""
    c = np.full(3, 0.5) if center is None else np.asarray(center, float)
    x = (np.arange(n) + 0.5) / n
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    return (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 >= radius**2
