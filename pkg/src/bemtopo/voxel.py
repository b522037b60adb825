"""Voxel occupancy grids, boundary triangulation, clean-up, smoothing and export."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import DisconnectedMaterial, EmptyGrid, IoError

# face order: -x, +x, -y, +y, -z, +z
FACE_AXIS = np.array([0, 0, 1, 1, 2, 2])
FACE_SIGN = np.array([-1, 1, -1, 1, -1, 1])
FACE_NORMALS = np.zeros((6, 3))
FACE_NORMALS[np.arange(6), FACE_AXIS] = FACE_SIGN

_SIX = ndimage.generate_binary_structure(3, 1)


def _face_corners():
    """Corner offsets (in voxel units) for each face, counter-clockwise seen from outside."""
    out = np.zeros((6, 4, 3), int)
    for f in range(6):
        a, s = FACE_AXIS[f], FACE_SIGN[f]
        b, c = (a + 1) % 3, (a + 2) % 3
        quad = [(0, 0), (1, 0), (1, 1), (0, 1)]
        if s < 0:
            quad = quad[::-1]
        for m, (u, v) in enumerate(quad):
            out[f, m, a] = 1 if s > 0 else 0
            out[f, m, b] = u
            out[f, m, c] = v
    return out


FACE_CORNERS = _face_corners()


def _block_components():
    """Face-connected component label of each cell of a 2x2x2 block, per occupancy pattern."""
    table = np.full((256, 8), -1, np.int8)
    for pat in range(256):
        lab = -np.ones(8, int)
        nxt = 0
        for c in range(8):
            if not (pat >> c) & 1 or lab[c] >= 0:
                continue
            stack = [c]
            lab[c] = nxt
            while stack:
                q = stack.pop()
                for bit in (1, 2, 4):
                    r = q ^ bit
                    if (pat >> r) & 1 and lab[r] < 0:
                        lab[r] = nxt
                        stack.append(r)
            nxt += 1
        table[pat] = lab
    return table


_BLOCK_LABELS = _block_components()


@dataclass
class VoxelGrid:
    """Boolean occupancy on a regular lattice; occupancy[i, j, k] with i along x."""

    occupancy: np.ndarray
    spacing: float = 1.0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, bool)
        if self.occupancy.ndim != 3 or min(self.occupancy.shape) < 1:
            raise ValueError("occupancy must be a non-empty 3D array")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        self.origin = np.asarray(self.origin, float).reshape(3)

    @classmethod
    def full(cls, dims, spacing=1.0, origin=(0.0, 0.0, 0.0)):
        return cls(np.ones(dims, bool), spacing, np.asarray(origin, float))

    @property
    def dims(self):
        return self.occupancy.shape

    @property
    def size(self):
        return int(np.prod(self.dims))

    def material_count(self):
        return int(self.occupancy.sum())

    def with_occupancy(self, occ):
        return replace(self, occupancy=np.asarray(occ, bool).copy())

    def centers(self, mask=None):
        """Voxel-center coordinates, optionally only where mask is true (C order)."""
        idx = np.argwhere(self.occupancy if mask is None else mask)
        return self.origin + (idx + 0.5) * self.spacing

    def extent(self):
        return np.asarray(self.dims) * self.spacing


@dataclass
class BoundaryMesh:
    """Triangulated boundary with per-triangle geometry and provenance."""

    vertices: np.ndarray
    triangles: np.ndarray
    voxel: np.ndarray  # flat C-order index of the owning material voxel
    face: np.ndarray  # face id 0..5 of that voxel
    spacing: float = 1.0
    normals: np.ndarray = None
    areas: np.ndarray = None
    centroids: np.ndarray = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float)
        self.triangles = np.asarray(self.triangles, np.int64)
        self.update_geometry()

    def update_geometry(self):
        v = self.vertices[self.triangles]
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        nrm = np.linalg.norm(cr, axis=1)
        self.areas = 0.5 * nrm
        self.normals = cr / np.where(nrm > 0, nrm, 1.0)[:, None]
        self.centroids = v.mean(axis=1)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_volume(self):
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def edges(self, period=None):
        """Sorted vertex pairs of all triangle edges; with a period, vertices
        that coincide modulo the period are identified."""
        t = self.triangles
        if period is not None:
            key = np.round(np.mod(self.vertices, period) / self.spacing).astype(np.int64)
            key %= int(round(period / self.spacing))
            _, ids = np.unique(key, axis=0, return_inverse=True)
            t = ids.ravel()[t]
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    def edge_valence(self, period=None):
        _, counts = np.unique(self.edges(period), axis=0, return_counts=True)
        return counts

    def is_closed(self, period=None):
        return bool(len(self.triangles)) and bool(np.all(self.edge_valence(period) % 2 == 0))

    def diameters(self):
        v = self.vertices[self.triangles]
        d = np.stack([np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))])
        return d.max(axis=0)

    def triangle_soup(self):
        return self.vertices[self.triangles]


def _neighbor(occ, axis, sign, periodic):
    """Occupancy of the face neighbor in direction (axis, sign); outside is void."""
    if periodic:
        return np.roll(occ, -sign, axis=axis)
    pad = [(0, 0)] * 3
    pad[axis] = (1, 1)
    p = np.pad(occ, pad)
    sl = [slice(None)] * 3
    sl[axis] = slice(1 + sign, 1 + sign + occ.shape[axis])
    return p[tuple(sl)]


def neighbor_count(occ, periodic=False):
    cnt = np.zeros(occ.shape, np.int8)
    for a in range(3):
        for s in (-1, 1):
            cnt += _neighbor(occ, a, s, periodic)
    return cnt


def label_components(occ, periodic=False):
    """6-connected component labels (0 = void) and component count."""
    lab, n = ndimage.label(occ, structure=_SIX)
    if not periodic or n <= 1:
        return lab, n
    parent = np.arange(n + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(3):
        lo = np.take(lab, 0, axis=a)
        hi = np.take(lab, -1, axis=a)
        both = (lo > 0) & (hi > 0)
        for x, y in zip(lo[both], hi[both]):
            rx, ry = find(x), find(y)
            if rx != ry:
                parent[max(rx, ry)] = min(rx, ry)
    roots = np.array([find(i) for i in range(n + 1)])
    uniq, new = np.unique(roots, return_inverse=True)
    return new.reshape(-1)[lab], len(uniq) - 1


def keep_largest_component(grid: VoxelGrid, periodic=False) -> VoxelGrid:
    lab, n = label_components(grid.occupancy, periodic)
    if n <= 1:
        return grid.with_occupancy(grid.occupancy)
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return grid.with_occupancy(lab == int(np.argmax(sizes)))


def extract_boundary(grid: VoxelGrid, keep_largest=False, periodic=False) -> BoundaryMesh:
    """Triangulate every material/void face as a 4-triangle fan from the face center.

    With periodic=True the grid is treated as a unit cell: faces against a
    material voxel across the cell boundary are interior.
    """
    occ = grid.occupancy
    if not occ.any():
        raise EmptyGrid("grid has no material voxels")
    _, ncomp = label_components(occ, periodic)
    if ncomp > 1:
        if not keep_largest:
            raise DisconnectedMaterial(ncomp)
        grid = keep_largest_component(grid, periodic)
        occ = grid.occupancy

    vox_list, face_list = [], []
    for f in range(6):
        exposed = occ & ~_neighbor(occ, FACE_AXIS[f], FACE_SIGN[f], periodic)
        flat = np.flatnonzero(exposed)
        vox_list.append(flat)
        face_list.append(np.full(len(flat), f))
    vox = np.concatenate(vox_list)
    face = np.concatenate(face_list)
    order = np.lexsort((face, vox))
    vox, face = vox[order], face[order]
    ijk = np.stack(np.unravel_index(vox, occ.shape), axis=1)
    nf = len(vox)

    # corner block patterns on the (n+1)^3 lattice
    pocc = np.pad(occ, 1) if not periodic else np.pad(occ, 1, mode="wrap")
    pattern = np.zeros(tuple(np.asarray(occ.shape) + 1), np.int64)
    for c in range(8):
        dx, dy, dz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        pattern += pocc[dx:dx + pattern.shape[0], dy:dy + pattern.shape[1],
                        dz:dz + pattern.shape[2]].astype(np.int64) << c

    corners = ijk[:, None, :] + FACE_CORNERS[face]  # (nf, 4, 3) lattice points
    # position of the owning voxel inside the 2x2x2 block of each corner
    rel = ijk[:, None, :] - (corners - 1)  # in {0,1}
    cell = rel[..., 0] + 2 * rel[..., 1] + 4 * rel[..., 2]
    pat = pattern[corners[..., 0], corners[..., 1], corners[..., 2]]
    comp = _BLOCK_LABELS[pat, cell].astype(np.int64)

    lat = np.asarray(occ.shape) + 1
    ckey = ((corners[..., 0] * lat[1] + corners[..., 1]) * lat[2] + corners[..., 2]) * 8 + comp
    uniq, cidx = np.unique(ckey.ravel(), return_inverse=True)
    cidx = cidx.reshape(nf, 4)
    lp = uniq // 8
    lattice_pts = np.stack([lp // (lat[1] * lat[2]), (lp // lat[2]) % lat[1], lp % lat[2]], axis=1)
    nv_c = len(uniq)
    centers = ijk + 0.5 + 0.5 * FACE_NORMALS[face]
    verts = np.concatenate([lattice_pts.astype(float), centers]) * grid.spacing + grid.origin
    cen_idx = nv_c + np.arange(nf)

    tris = np.empty((nf, 4, 3), np.int64)
    for m in range(4):
        tris[:, m, 0] = cen_idx
        tris[:, m, 1] = cidx[:, m]
        tris[:, m, 2] = cidx[:, (m + 1) % 4]
    return BoundaryMesh(
        vertices=verts,
        triangles=tris.reshape(-1, 3),
        voxel=np.repeat(vox, 4),
        face=np.repeat(face, 4),
        spacing=grid.spacing,
    )


def postprocess(grid: VoxelGrid, frozen=None, periodic=False, max_sweeps=1000) -> VoxelGrid:
    """Remove isolated and pendant voxels, fill single-voxel enclosed pores; repeat to fixpoint."""
    occ = grid.occupancy.copy()
    keep = np.zeros_like(occ) if frozen is None else np.asarray(frozen, bool)
    for _ in range(max_sweeps):
        cnt = neighbor_count(occ, periodic)
        remove = occ & (cnt <= 1) & ~keep
        fill = ~occ & (cnt == 6)
        if not remove.any() and not fill.any():
            break
        occ = (occ & ~remove) | fill
    return grid.with_occupancy(occ)


def vertex_neighbors(mesh: BoundaryMesh):
    """CSR adjacency (indptr, indices) of the vertex 1-rings."""
    e = np.unique(mesh.edges(), axis=0)
    both = np.concatenate([e, e[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    indptr = np.searchsorted(both[:, 0], np.arange(len(mesh.vertices) + 1))
    return indptr, both[:, 1]


def laplacian_smooth(mesh: BoundaryMesh, iterations=10, lam=0.5) -> BoundaryMesh:
    """Jacobi umbrella smoothing; connectivity untouched."""
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    indptr, nbr = vertex_neighbors(mesh)
    deg = np.diff(indptr)
    owner = np.repeat(np.arange(len(deg)), deg)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        acc = np.zeros_like(v)
        np.add.at(acc, owner, v[nbr])
        mean = acc / np.maximum(deg, 1)[:, None]
        v = np.where(deg[:, None] > 0, v + lam * (mean - v), v)
    return replace(mesh, vertices=v)


def export_stl(mesh: BoundaryMesh, path=None, header=b"bemtopo") -> bytes:
    """Binary little-endian STL; written to path if given."""
    soup = mesh.triangle_soup().astype("<f4")
    rec = np.zeros(len(soup), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = mesh.normals
    rec["v"] = soup
    data = header[:80].ljust(80, b"\0") + struct.pack("<I", len(soup)) + rec.tobytes()
    if path is not None:
        _write(path, data)
    return data


def read_stl(data):
    """Parse binary STL bytes into (normals, triangle vertices)."""
    n = struct.unpack_from("<I", data, 80)[0]
    rec = np.frombuffer(data, dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")],
                        count=n, offset=84)
    return rec["n"].astype(float), rec["v"].astype(float)


def export_vtk(grid: VoxelGrid, fields=None, path=None, title="bemtopo") -> bytes:
    """Legacy ASCII structured-points file with per-cell scalars.

    fields maps name -> per-voxel array of grid shape (or flat C order).
    """
    fields = dict(fields or {})
    fields.setdefault("occupancy", grid.occupancy.astype(float))
    nx, ny, nz = grid.dims
    buf = io.StringIO()
    buf.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\n")
    buf.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
    buf.write("ORIGIN {:.17g} {:.17g} {:.17g}\n".format(*grid.origin))
    buf.write("SPACING {0:.17g} {0:.17g} {0:.17g}\n".format(grid.spacing))
    buf.write(f"CELL_DATA {grid.size}\n")
    for name, vals in fields.items():
        vals = np.asarray(vals, float).reshape(grid.dims)
        buf.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        flat = vals.ravel(order="F")
        for start in range(0, len(flat), 9):
            buf.write(" ".join(f"{x:.10g}" for x in flat[start:start + 9]) + "\n")
    data = buf.getvalue().encode()
    if path is not None:
        _write(path, data)
    return data


def read_vtk_scalars(data):
    """Minimal reader for files written by export_vtk: returns dims and {name: array}."""
    lines = data.decode().splitlines()
    dims = None
    out = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "DIMENSIONS":
            dims = tuple(int(p) - 1 for p in parts[1:])
        if parts and parts[0] == "SCALARS":
            name = parts[1]
            n = int(np.prod(dims))
            vals = []
            i += 2
            while len(vals) < n:
                vals.extend(float(x) for x in lines[i].split())
                i += 1
            out[name] = np.array(vals).reshape(dims, order="F")
            continue
        i += 1
    return dims, out


def _write(path, data):
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(str(exc)) from exc
