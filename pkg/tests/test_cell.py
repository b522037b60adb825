import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bemtopo.bie import BoundaryOperator
from bemtopo.cell import (
    dilute_bulk_modulus, face_solid_angle_moments, hs_upper_bound, periodic_free_term, sphere_occupancy,
)
from bemtopo.fmm import PeriodicFmmBackend
from bemtopo.kernels import Material
from bemtopo.optimize import BackendSpec, OptimizationConfig, evaluate_fields, solve_grid, solve_periodic_cell
from bemtopo.voxel import VoxelGrid, extract_boundary

MAT = Material.from_shear(1.0, 0.3)


def hs_textbook(K1, G1, f1, K2):
    """Upper bound written as K1 + f2 / (1/(K2 - K1) + 3 f1 / (3 K1 + 4 G1))."""
    f2 = 1.0 - f1
    if f2 == 0.0:
        return K1
    return K1 + f2 / (1.0 / (K2 - K1) + 3.0 * f1 / (3.0 * K1 + 4.0 * G1))


def test_hs_bound_literature_value():
    m = Material(2.25, 0.125)  # K = G = 1
    assert m.K == pytest.approx(1.0) and m.G == pytest.approx(1.0)
    assert hs_upper_bound(m, 0.5) == pytest.approx(4 / 11, rel=1e-14)
    assert hs_upper_bound(m, 0.5) == pytest.approx(hs_textbook(1.0, 1.0, 0.5, 0.0), rel=1e-14)
    assert hs_upper_bound(m, 1.0) == pytest.approx(1.0)
    assert hs_upper_bound(m, 0.0) == 0.0
    with pytest.raises(ValueError):
        hs_upper_bound(m, 1.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10.0), st.floats(-0.9, 0.49), st.floats(0.0, 1.0))
def test_hs_bound_properties(E, nu, phi):
    m = Material(E, nu)
    b = hs_upper_bound(m, phi)
    assert b == pytest.approx(hs_textbook(m.K, m.G, phi, 0.0), rel=1e-10, abs=1e-14)
    assert 0.0 <= b <= m.K * phi + 1e-12  # never above the Voigt average


def test_face_moments():
    i_par, i_perp = face_solid_angle_moments()
    assert i_par + 2 * i_perp == pytest.approx(4 * math.pi / 3, rel=1e-12)
    assert i_par == pytest.approx(2.935864119434466, rel=1e-12)


def test_free_term_limits():
    occ = np.ones((6, 6, 6), bool)
    occ[2:4, 2:4, 2:4] = False
    assert np.allclose(periodic_free_term(occ, MAT), -np.eye(3), atol=1e-12)
    assert np.allclose(periodic_free_term(np.zeros((4, 4, 4), bool), MAT), 0.0)


def test_periodic_constant_on_closed_cavity():
    # the lattice double layer over a closed cavity gives +1/2 c for a constant c (normals into the void),
    # so with the periodic free term the operator returns c: the cell-mean displacement is not annihilated
    occ = np.ones((4, 4, 4), bool)
    occ[1:3, 1:3, 1:3] = False
    grid = VoxelGrid(occ, 0.25)
    mesh = extract_boundary(grid, periodic=True)
    free = -0.5 * np.eye(3) - periodic_free_term(occ, MAT)
    op = BoundaryOperator(mesh, MAT, PeriodicFmmBackend(MAT, 1.0, order=8, leaf_size=64), free_term=free)
    n = mesh.n_triangles
    for c in np.eye(3):
        r = op.full(np.tile(c, (n, 1)), np.zeros((n, 3)))
        assert np.abs(r.reshape(-1, 3) - c).max() < 1e-4


def periodic_config(n, radius):
    return OptimizationConfig(dims=(n, n, n), spacing=1.0 / n, material=MAT, periodic=True,
                              initial_radius=radius, target_volume_fraction=1.0,
                              backend=BackendSpec(True, 6, 128))


def test_full_cell_is_homogeneous():
    cfg = periodic_config(4, 0.0)
    grid = cfg.initial_grid()
    assert grid.occupancy.all()
    res = solve_grid(grid, cfg)
    f = evaluate_fields(grid, res, MAT, background=[1, 1, 1, 0, 0, 0])
    assert np.array_equal(f.stress, np.tile([1.0, 1, 1, 0, 0, 0], (grid.size, 1)))
    _, k, trace = solve_periodic_cell(cfg)
    assert k == MAT.K and len(trace) == 1


def test_small_cavities_soften_monotonically():
    ks = []
    for r in (0.15, 0.25):
        grid, k, trace = solve_periodic_cell(periodic_config(8, r))
        ks.append(k)
        assert k < MAT.K
        assert k <= hs_upper_bound(MAT, trace[-1].alpha) * 1.005
        assert trace[-1].iterations <= 50
    assert ks[1] < ks[0]
    # first voxelized shell: the dilute estimate is only a trend oracle
    phi = 1.0 - sphere_occupancy(8, 0.15).mean()
    assert ks[0] == pytest.approx(dilute_bulk_modulus(MAT, phi), rel=0.05)
