import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bemtopo.errors import DisconnectedMaterial, EmptyGrid
from bemtopo.voxel import (
    VoxelGrid, export_stl, export_vtk, extract_boundary, keep_largest_component,
    laplacian_smooth, postprocess, read_stl, read_vtk_scalars, vertex_neighbors,
)


def check_mesh_invariants(mesh, grid):
    assert np.allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-12)
    assert (mesh.areas > 0).all()
    v = mesh.vertices[mesh.triangles]
    assert np.abs(mesh.centroids - v.mean(axis=1)).max() < 1e-12
    assert mesh.n_triangles % 4 == 0
    vol = grid.spacing**3 * grid.material_count()
    assert abs(mesh.signed_volume() - vol) <= 1e-10 * vol
    # no triangle on a face between two material voxels
    occ = grid.occupancy
    ijk = np.stack(np.unravel_index(mesh.voxel, occ.shape), axis=1)
    from bemtopo.voxel import FACE_AXIS, FACE_SIGN
    nb = ijk.copy()
    nb[np.arange(len(nb)), FACE_AXIS[mesh.face]] += FACE_SIGN[mesh.face]
    inside = ((nb >= 0) & (nb < occ.shape)).all(axis=1)
    assert not occ[tuple(nb[inside].T)].any()


def test_single_voxel():
    g = VoxelGrid.full((1, 1, 1), spacing=0.5)
    m = extract_boundary(g)
    assert m.n_triangles == 24
    assert m.areas.sum() == pytest.approx(6 * 0.25)
    assert m.signed_volume() == pytest.approx(0.125)
    assert (m.edge_valence() == 2).all()
    check_mesh_invariants(m, g)


def test_cube_counts():
    m = extract_boundary(VoxelGrid.full((2, 2, 2)))
    assert m.n_triangles == 96


def test_bar_of_two():
    g = VoxelGrid.full((2, 1, 1))
    m = extract_boundary(g)
    # brute-force face enumeration
    faces = 0
    for i in range(2):
        for d in itertools.product((-1, 0, 1), repeat=3):
            if sum(map(abs, d)) != 1:
                continue
            j = (i + d[0], d[1], d[2])
            faces += not (0 <= j[0] < 2 and j[1] == 0 and j[2] == 0)
    assert faces == 10
    assert m.n_triangles == 40
    check_mesh_invariants(m, g)


def test_empty_and_disconnected():
    with pytest.raises(EmptyGrid):
        extract_boundary(VoxelGrid(np.zeros((2, 2, 2), bool)))
    occ = np.zeros((3, 1, 1), bool)
    occ[0] = occ[2] = True
    with pytest.raises(DisconnectedMaterial):
        extract_boundary(VoxelGrid(occ))
    m = extract_boundary(VoxelGrid(occ), keep_largest=True)
    assert m.n_triangles == 24


def test_diagonal_edge_is_split():
    # two voxels sharing only an edge: vertices on that edge are duplicated
    occ = np.zeros((2, 2, 1), bool)
    occ[0, 0, 0] = occ[1, 1, 0] = True
    occ[1, 0, 0] = True  # keep face-connected; the (0,0)-(1,1) edge is bridged on one side only
    g = VoxelGrid(occ)
    m = extract_boundary(g)
    assert (m.edge_valence() == 2).all()
    check_mesh_invariants(m, g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.4, 0.9))
def test_random_grids_watertight(seed, fill):
    rng = np.random.default_rng(seed)
    occ = rng.random((5, 4, 4)) < fill
    if not occ.any():
        return
    g = keep_largest_component(VoxelGrid(occ, spacing=0.3))
    m = extract_boundary(g)
    check_mesh_invariants(m, g)
    val = m.edge_valence()
    # edges are manifold except where two material voxels are bridged diagonally twice
    assert (val % 2 == 0).all()


def test_postprocess():
    occ = np.zeros((4, 4, 4), bool)
    occ[1:3, 1:3, 1:3] = True
    occ[3, 3, 3] = True  # isolated
    out = postprocess(VoxelGrid(occ))
    assert not out.occupancy[3, 3, 3]
    assert out.material_count() == 8
    solid = VoxelGrid.full((3, 3, 3))
    assert np.array_equal(postprocess(solid).occupancy, solid.occupancy)
    holed = solid.occupancy.copy()
    holed[1, 1, 1] = False
    assert postprocess(VoxelGrid(holed)).occupancy[1, 1, 1]
    pend = np.zeros((4, 4, 4), bool)
    pend[:2, :2, :2] = True
    pend[2, 0, 0] = True  # pendant voxel
    assert postprocess(VoxelGrid(pend)).material_count() == 8
    frozen = np.zeros_like(pend)
    frozen[2, 0, 0] = True
    assert postprocess(VoxelGrid(pend), frozen=frozen).material_count() == 9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_postprocess_idempotent(seed):
    occ = np.random.default_rng(seed).random((5, 5, 5)) < 0.6
    once = postprocess(VoxelGrid(occ))
    twice = postprocess(once)
    assert np.array_equal(once.occupancy, twice.occupancy)


def test_smoothing():
    m = extract_boundary(VoxelGrid.full((1, 1, 1)))
    assert np.array_equal(laplacian_smooth(m, 0).vertices, m.vertices)
    s = laplacian_smooth(m, 1, 1.0)
    indptr, nbr = vertex_neighbors(m)
    for v in range(len(m.vertices)):
        ring = m.vertices[nbr[indptr[v]:indptr[v + 1]]]
        assert np.allclose(s.vertices[v], ring.mean(axis=0))
    # corner 1-ring: 3 adjacent corners + 3 face centers
    assert np.diff(indptr).max() == 6
    assert np.array_equal(s.triangles, m.triangles)
    area = [m.areas.sum()]
    cur = m
    for _ in range(6):
        cur = laplacian_smooth(cur, 1, 0.5)
        area.append(cur.areas.sum())
    assert all(b <= a + 1e-12 for a, b in zip(area, area[1:]))


def test_stl_roundtrip(tmp_path):
    m = extract_boundary(VoxelGrid.full((1, 1, 1), spacing=0.1, origin=(0.3, 0.1, 0.0)))
    data = export_stl(m, tmp_path / "c.stl")
    assert len(data) == 1284
    assert (tmp_path / "c.stl").read_bytes() == data
    nrm, tri = read_stl(data)
    assert np.allclose(tri, m.triangle_soup().astype(np.float32))
    assert np.allclose(nrm, m.normals, atol=1e-7)


def test_vtk_cells(tmp_path):
    g = VoxelGrid.full((2, 2, 2))
    td = np.arange(8.0).reshape(2, 2, 2)
    data = export_vtk(g, {"td": td}, tmp_path / "g.vtk")
    text = data.decode()
    assert "CELL_DATA 8" in text
    dims, fields = read_vtk_scalars(data)
    assert dims == (2, 2, 2)
    assert np.array_equal(fields["td"], td)
    assert fields["occupancy"].sum() == 8


def test_io_error():
    from bemtopo.errors import IoError
    with pytest.raises(IoError):
        export_stl(extract_boundary(VoxelGrid.full((1, 1, 1))), "/nonexistent/dir/x.stl")


def test_periodic_full_cell_has_no_boundary_faces():
    occ = np.ones((4, 4, 4), bool)
    occ[1:3, 1:3, 1:3] = False
    m = extract_boundary(VoxelGrid(occ, 0.25), periodic=True)
    assert m.n_triangles == 24 * 4
    # cavity normals point into the void, i.e. towards the cell center
    d = np.einsum("ij,ij->i", m.normals, m.centroids - 0.5)
    assert (d < 0).all()
