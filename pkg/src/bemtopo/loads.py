"""Load cases: region selectors on a boundary mesh and assembly of boundary conditions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bie import BoundaryConditions, apply_concentrated_forces
from .voxel import FACE_AXIS, FACE_SIGN

FACE_NAMES = {"x-": 0, "x+": 1, "y-": 2, "y+": 3, "z-": 4, "z+": 5}
LOAD_TYPES = ("dirichlet", "neumann", "point_force")


@dataclass
class Region:
    """Named outer face of the domain box and/or an axis-aligned box predicate on centroids."""

    face: str | None = None
    box: tuple | None = None

    def __post_init__(self):
        if self.face is not None and self.face not in FACE_NAMES:
            raise ValueError(f"unknown face {self.face!r}; expected one of {sorted(FACE_NAMES)}")
        if self.box is not None:
            b = np.asarray(self.box, float)
            if b.shape != (2, 3) or np.any(b[0] > b[1]):
                raise ValueError("box must be [[xmin, ymin, zmin], [xmax, ymax, zmax]]")
            self.box = b

    def select(self, mesh, lo, hi):
        """Mask of triangles in the region; lo, hi are the corners of the domain box."""
        mask = np.ones(mesh.n_triangles, bool)
        tol = 1e-9 * mesh.spacing
        if self.face is not None:
            f = FACE_NAMES[self.face]
            a = FACE_AXIS[f]
            plane = hi[a] if FACE_SIGN[f] > 0 else lo[a]
            mask &= (mesh.face == f) & (np.abs(mesh.centroids[:, a] - plane) <= tol)
        if self.box is not None:
            c = mesh.centroids
            mask &= np.all((c >= self.box[0] - tol) & (c <= self.box[1] + tol), axis=1)
        return mask


@dataclass
class Load:
    """One load entry; value is a displacement, a traction or a force vector by type."""

    type: str
    value: tuple
    region: Region = field(default_factory=Region)
    point: tuple | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.type not in LOAD_TYPES:
            raise ValueError(f"unknown load type {self.type!r}")
        self.value = np.asarray(self.value, float).reshape(3)
        if self.type == "point_force":
            if self.point is None:
                raise ValueError("point_force needs a point")
            self.point = np.asarray(self.point, float).reshape(3)

    @classmethod
    def from_dict(cls, d):
        reg = d.get("region", {}) or {}
        return cls(d["type"], d["value"], Region(reg.get("face"), reg.get("box")),
                   d.get("point"), d.get("radius"))


def build_conditions(mesh, loads, lo, hi):
    """Boundary conditions for a mesh: traction free except where loads apply.

    Dirichlet entries are applied first, then tractions and point forces are
    added on the remaining (Neumann) triangles.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    bc = BoundaryConditions.traction_free(mesh.n_triangles)
    for ld in loads:
        if ld.type == "dirichlet":
            bc.set_dirichlet(ld.region.select(mesh, lo, hi), ld.value)
    for ld in loads:
        if ld.type == "neumann":
            mask = ld.region.select(mesh, lo, hi) & ~bc.dirichlet
            bc.values[mask] += ld.value
        elif ld.type == "point_force":
            mask = ld.region.select(mesh, lo, hi) & ~bc.dirichlet
            radius = 1.5 * mesh.spacing if ld.radius is None else ld.radius
            bc.add_traction(apply_concentrated_forces([(ld.point, ld.value)], mesh, radius, mask))
    return bc


def loaded_voxels(mesh, bc, n_voxels):
    """Flat mask of voxels owning a Dirichlet or loaded triangle."""
    tri = bc.dirichlet | np.any(bc.values != 0.0, axis=1)
    out = np.zeros(n_voxels, bool)
    out[mesh.voxel[tri]] = True
    return out


def torsion_forces(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), magnitude=1.0):
    """Eight corner forces twisting a box about its x axis.

    On the x- face the forces (0,-1,1), (0,1,1), (0,1,-1), (0,-1,-1) sit at
    the corners (y+,z+), (y+,z-), (y-,z-), (y-,z+), each with moment +1 about
    the axis; the x+ face carries their negatives at the same (y, z) corners.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    yz = [(1, 1), (1, 0), (0, 0), (0, 1)]
    vecs = [(0, -1, 1), (0, 1, 1), (0, 1, -1), (0, -1, -1)]
    out = []
    for xs, sign in ((0, 1.0), (1, -1.0)):
        for (j, k), v in zip(yz, vecs):
            p = np.array([(lo, hi)[xs][0], (lo, hi)[j][1], (lo, hi)[k][2]])
            out.append((p, sign * magnitude * np.asarray(v, float)))
    return out
