"""Hard-kill topology optimization driven by the topological derivative.

Each cycle: extract the boundary of the material voxels, solve the boundary
value problem, evaluate stresses at material voxel centres, remove voxels
whose topological derivative falls below D_min + C (D_max - D_min), clean up,
and record the material fraction and compliance.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .bie import (
    BieSystem, BoundaryConditions, BoundaryOperator, BoundarySolution, check_equilibrium,
    interior_stress, remove_rigid_motion,
)
from .cell import (
    effective_bulk_modulus, hs_upper_bound, macro_volumetric_strain, periodic_free_term, sphere_occupancy,
)
from .errors import AllRemoved, EmptyGrid
from .fmm import DirectBackend, FmmBackend, PeriodicFmmBackend
from .gmres import SolverConfig, gmres_solve
from .kernels import Material, strain_energy_density, topological_derivative
from .loads import Load, build_conditions, loaded_voxels
from .voxel import VoxelGrid, extract_boundary, keep_largest_component, label_components, postprocess

log = logging.getLogger(__name__)


@dataclass
class BackendSpec:
    """Summation backend choice; FMM order and leaf size trade accuracy for speed."""

    fmm: bool = True
    order: int = 6
    leaf_size: int = 512

    def make(self, material, period=None):
        if period is not None:
            if not self.fmm:
                raise ValueError("periodic cells need the FMM backend")
            return PeriodicFmmBackend(material, period, self.order, self.leaf_size)
        if self.fmm:
            return FmmBackend(material, self.order, self.leaf_size)
        return DirectBackend(material)


@dataclass
class OptimizationConfig:
    """Inputs of the optimization loop.

    For periodic cells the domain is a cube of dims voxels per side under a
    hydrostatic macroscopic stress, starting from a centred spherical void of
    radius initial_radius (in cell units); loads are ignored.
    """

    dims: tuple = (16, 16, 16)
    spacing: float = 1.0 / 16
    material: Material = field(default_factory=lambda: Material.from_shear(1.0, 0.3))
    loads: list = field(default_factory=list)
    threshold_fraction: float = 0.02
    target_volume_fraction: float = 0.6
    max_cycles: int = 20
    periodic: bool = False
    initial_radius: float = 0.2
    hydrostatic_stress: float = 1.0
    single_iteration: bool = False
    max_removal: float = 0.2
    freeze_loaded: bool = True
    warm_start: bool = True
    solver: SolverConfig = field(default_factory=SolverConfig)
    backend: BackendSpec = field(default_factory=BackendSpec)
    on_cycle: Callable | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError("threshold_fraction must lie in (0, 1)")
        if not 0.0 < self.target_volume_fraction <= 1.0:
            raise ValueError("target_volume_fraction must lie in (0, 1]")
        if self.max_cycles < 0:
            raise ValueError("max_cycles must be >= 0")
        if not 0.0 < self.max_removal <= 1.0:
            raise ValueError("max_removal must lie in (0, 1]")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError("dims must be three positive integers")
        if self.periodic:
            if len(set(self.dims)) != 1:
                raise ValueError("periodic cells must be cubic")
            if not 0.0 <= self.initial_radius < 0.5:
                raise ValueError("initial_radius must lie in [0, 0.5)")
        self.loads = [ld if isinstance(ld, Load) else Load.from_dict(ld) for ld in self.loads]

    def initial_grid(self):
        if self.periodic:
            occ = sphere_occupancy(self.dims[0], self.initial_radius)
            return VoxelGrid(occ, self.spacing)
        return VoxelGrid.full(self.dims, self.spacing)


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    alpha: float
    psi: float
    psi_ratio: float
    iterations: int
    removed: int
    wall_time: float
    k_eff: float = float("nan")

    def key(self):
        """Everything except the wall time (for reproducibility checks); nan K_eff maps to None."""
        k = None if np.isnan(self.k_eff) else self.k_eff
        return (self.cycle, self.alpha, self.psi, self.psi_ratio, self.iterations, self.removed, k)


@dataclass
class Fields:
    stress: np.ndarray  # (n_material, 6) Voigt, C order of material voxels
    td: np.ndarray  # grid-shaped, nan on void
    energy: np.ndarray  # grid-shaped energy density, 0 on void


@dataclass
class OptimizationState:
    cycle: int
    grid: VoxelGrid
    alpha: float
    psi: float
    fields: Fields
    solution: BoundarySolution
    trace: list


@dataclass
class SolveResult:
    mesh: object
    operator: BoundaryOperator | None
    conditions: BoundaryConditions | None
    solution: BoundarySolution
    x: np.ndarray | None
    keys: np.ndarray | None


def triangle_keys(mesh):
    """Stable identity of a triangle across cycles: (voxel, face, fan position)."""
    return 4 * (mesh.voxel * 6 + mesh.face) + np.arange(mesh.n_triangles) % 4


def _warm_start(keys, prev):
    if prev is None or prev.x is None:
        return None
    x0 = np.zeros((len(keys), 3))
    pos = np.searchsorted(prev.keys, keys)
    pos = np.minimum(pos, len(prev.keys) - 1)
    hit = prev.keys[pos] == keys
    x0[hit] = prev.x.reshape(-1, 3)[pos[hit]]
    return x0.ravel() if hit.any() else None


def solve_grid(grid: VoxelGrid, config: OptimizationConfig, previous: SolveResult | None = None) -> SolveResult:
    """Boundary solve on the current grid (bounded loads or periodic fluctuation problem)."""
    mat = config.material
    if config.periodic:
        occ = grid.occupancy
        period = grid.extent()[0]
        if occ.all():
            empty = BoundarySolution(np.zeros((0, 3)), np.zeros((0, 3)), [0.0])
            return SolveResult(None, None, None, empty, None, None)
        mesh = extract_boundary(grid, periodic=True)
        backend = config.backend.make(mat, period)
        free = -0.5 * np.eye(3) - periodic_free_term(occ, mat)
        op = BoundaryOperator(mesh, mat, backend, free_term=free)
        bc = BoundaryConditions.traction_free(mesh.n_triangles)
        bc.values[:] = -config.hydrostatic_stress * mesh.normals
    else:
        mesh = extract_boundary(grid)
        op = BoundaryOperator(mesh, mat, config.backend.make(mat))
        lo = grid.origin
        bc = build_conditions(mesh, config.loads, lo, lo + grid.extent())
        if bc.pure_neumann:
            check_equilibrium(mesh, bc.values)
    system = BieSystem(op, bc)
    keys = triangle_keys(mesh)
    x0 = _warm_start(keys, previous) if config.warm_start else None
    x, hist = gmres_solve(system.matvec_A, system.rhs(), config.solver, x0=x0)
    u, t = system.assemble(x)
    n = mesh.n_triangles
    if config.periodic:
        w = mesh.areas
        u = u - (w[:, None] * u).sum(0) / w.sum()
    elif bc.pure_neumann:
        u = remove_rigid_motion(u, mesh.centroids, mesh.areas)
    log.info("solve: %d triangles, %d GMRES iterations", n, len(hist) - 1)
    return SolveResult(mesh, op, bc, BoundarySolution(u, t, hist), x, keys)


def evaluate_fields(grid: VoxelGrid, result: SolveResult, material: Material, backend=None,
                    background=None) -> Fields:
    """Stress at material voxel centres, topological derivative and energy density.

    The rigid-body part of the boundary displacement carries no stress, so it
    is projected out before the double-layer sum (translations only for
    periodic cells, where rotations are not admissible). background is a
    uniform stress (Voigt) superposed on the recovered field.
    """
    occ = grid.occupancy
    pts = grid.centers()
    bg = np.zeros(6) if background is None else np.asarray(background, float).reshape(6)
    if result.operator is None:
        stress = np.tile(bg, (len(pts), 1))
    else:
        op, sol = result.operator, result.solution
        mesh = result.mesh
        if op.period is None:
            u = remove_rigid_motion(sol.displacement, mesh.centroids, mesh.areas)
        else:
            w = mesh.areas[:, None]
            u = sol.displacement - (w * sol.displacement).sum(0) / w.sum()
        stress = interior_stress(op, u, sol.traction, pts, backend) + bg
    td = np.full(occ.shape, np.nan)
    energy = np.zeros(occ.shape)
    td[occ] = topological_derivative(stress, material)
    energy[occ] = strain_energy_density(stress, material)
    return Fields(stress, td, energy)


def compute_compliance(energy_field, grid: VoxelGrid):
    """Psi = sum over material voxels of energy density times voxel volume."""
    e = np.asarray(energy_field, float)
    return float(e[grid.occupancy].sum() * grid.spacing**3)


def mean_hydrostatic_stress(fields: Fields, grid: VoxelGrid):
    """Cell average of tr(sigma)/3, void counting as zero stress."""
    return float(fields.stress[:, :3].sum() / 3.0 / grid.size)


def boundary_normal_flux(result: SolveResult):
    """sum over triangles of u.n times area (zero without a boundary)."""
    if result.mesh is None:
        return 0.0
    m = result.mesh
    return float((np.einsum("ij,ij->i", result.solution.displacement, m.normals) * m.areas).sum())


def cell_bulk_modulus(grid: VoxelGrid, fields: Fields, result: SolveResult, material, hydrostatic=1.0):
    """Effective bulk modulus of a periodic cell under hydrostatic macroscopic stress.

    The mean stress is sampled at voxel centres; the mean strain comes from
    the boundary displacement, which keeps it exact for any uniform strain
    the lattice sum adds to the fluctuation field.
    """
    s = mean_hydrostatic_stress(fields, grid)
    alpha = grid.material_count() / grid.size
    e = macro_volumetric_strain(s, alpha, boundary_normal_flux(result), material, hydrostatic,
                                float(np.prod(grid.extent())))
    return effective_bulk_modulus(s, e)


def threshold_removal(grid: VoxelGrid, td_field, C, frozen=None, max_fraction=None) -> VoxelGrid:
    """Void every material voxel with D < D_min + C (D_max - D_min).

    Min and max run over material voxels. With max_fraction, C is lowered by
    bisection until at most that fraction of the material is removed.
    Frozen voxels are never removed.
    """
    if not 0.0 < C < 1.0:
        raise ValueError("C must lie in (0, 1)")
    occ = grid.occupancy
    td = np.asarray(td_field, float).reshape(occ.shape)
    vals = td[occ]
    if not len(vals):
        raise EmptyGrid("grid has no material voxels")
    dmin, dmax = float(vals.min()), float(vals.max())
    keep = np.zeros(occ.shape, bool) if frozen is None else np.asarray(frozen, bool).reshape(occ.shape)
    candidates = occ & ~keep

    def removal(c):
        return candidates & (td < dmin + c * (dmax - dmin))

    remove = removal(C)
    n_mat = int(occ.sum())
    if max_fraction is not None and remove.sum() > max_fraction * n_mat:
        lo, hi = 0.0, C
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if removal(mid).sum() <= max_fraction * n_mat:
                lo = mid
            else:
                hi = mid
        remove = removal(lo)
        log.info("removal capped: C lowered from %g to %g", C, lo)
    if remove.sum() == n_mat:
        raise AllRemoved("threshold removes every material voxel")
    return grid.with_occupancy(occ & ~remove)


def remove_lowest(grid: VoxelGrid, td_field, target_count, frozen=None) -> VoxelGrid:
    """Void the lowest-D voxels until target_count material voxels remain."""
    occ = grid.occupancy
    td = np.asarray(td_field, float).reshape(occ.shape)
    keep = np.zeros(occ.shape, bool) if frozen is None else np.asarray(frozen, bool).reshape(occ.shape)
    cand = np.flatnonzero((occ & ~keep).ravel())
    k = int(occ.sum()) - int(target_count)
    if k <= 0:
        return grid.with_occupancy(occ)
    if k >= int(occ.sum()):
        raise AllRemoved("target leaves no material")
    order = cand[np.argsort(td.ravel()[cand], kind="stable")]
    out = occ.copy().ravel()
    out[order[:k]] = False
    return grid.with_occupancy(out.reshape(occ.shape))


def _cleanup(grid, frozen, periodic):
    grid = postprocess(grid, frozen, periodic)
    if not grid.occupancy.any():
        raise AllRemoved("clean-up removed every material voxel")
    _, n = label_components(grid.occupancy, periodic)
    if n > 1:
        log.warning("material split into %d components; keeping the largest", n)
        grid = keep_largest_component(grid, periodic)
    return grid


def _background(config):
    if not config.periodic:
        return None
    p = config.hydrostatic_stress
    return np.array([p, p, p, 0.0, 0.0, 0.0])


def _state_record(cycle, grid, fields, result, config, psi0, removed, t0):
    psi = compute_compliance(fields.energy, grid)
    k_eff = float("nan")
    if config.periodic:
        k_eff = cell_bulk_modulus(grid, fields, result, config.material, config.hydrostatic_stress)
    psi0 = psi if psi0 is None else psi0
    rec = CycleRecord(cycle, grid.material_count() / grid.size, psi, psi / psi0 if psi0 else float("nan"),
                      result.solution.iterations, removed, time.perf_counter() - t0, k_eff)
    return rec


def run_optimization(config: OptimizationConfig, grid: VoxelGrid | None = None):
    """Hard-kill loop; returns (final grid, trace of CycleRecord).

    Stops once alpha <= target_volume_fraction or after max_cycles removals.
    In single_iteration mode one removal goes straight to the target fraction
    (lowest D first) and the resulting grid is solved once more.
    """
    grid = config.initial_grid() if grid is None else grid
    mat = config.material
    bg = _background(config)
    t0 = time.perf_counter()
    result = solve_grid(grid, config)
    fields = evaluate_fields(grid, result, mat, background=bg)
    frozen = None
    if config.freeze_loaded and not config.periodic:
        frozen = loaded_voxels(result.mesh, result.conditions, grid.size).reshape(grid.dims)
    rec = _state_record(0, grid, fields, result, config, None, 0, t0)
    psi0 = rec.psi
    trace = [rec]
    _notify(config, 0, grid, rec, fields, result, trace)
    cycle = 0
    while rec.alpha > config.target_volume_fraction and cycle < config.max_cycles:
        t0 = time.perf_counter()
        if config.single_iteration:
            target = int(round(config.target_volume_fraction * grid.size))
            new = remove_lowest(grid, fields.td, target, frozen)
        else:
            new = threshold_removal(grid, fields.td, config.threshold_fraction, frozen, config.max_removal)
        new = _cleanup(new, frozen, config.periodic)
        removed = grid.material_count() - new.material_count()
        if removed <= 0:
            log.warning("cycle %d removed no material; stopping", cycle + 1)
            break
        grid = new
        cycle += 1
        result = solve_grid(grid, config, result)
        fields = evaluate_fields(grid, result, mat, background=bg)
        rec = _state_record(cycle, grid, fields, result, config, psi0, removed, t0)
        trace.append(rec)
        log.info("cycle %d: alpha %.4f, Psi/Psi0 %.4f", cycle, rec.alpha, rec.psi_ratio)
        _notify(config, cycle, grid, rec, fields, result, trace)
        if config.single_iteration:
            break
    return grid, trace


def _notify(config, cycle, grid, rec, fields, result, trace):
    if config.on_cycle is not None:
        config.on_cycle(OptimizationState(cycle, grid, rec.alpha, rec.psi, fields, result.solution, list(trace)))


def solve_periodic_cell(config: OptimizationConfig):
    """Maximum bulk modulus cell: returns (grid, K_eff, trace)."""
    if not config.periodic:
        config = replace(config, periodic=True)
    grid, trace = run_optimization(config)
    return grid, trace[-1].k_eff, trace


def summary(config: OptimizationConfig, grid: VoxelGrid, trace):
    """Plain dict of final quantities (used by the command line front end)."""
    out = {"cycles": len(trace) - 1, "alpha": trace[-1].alpha, "psi": trace[-1].psi,
           "psi_ratio": trace[-1].psi_ratio, "material_voxels": grid.material_count()}
    if config.periodic:
        out["k_eff"] = trace[-1].k_eff
        out["hs_upper_bound"] = hs_upper_bound(config.material, trace[-1].alpha)
        out["k_eff_over_bound"] = out["k_eff"] / out["hs_upper_bound"]
    return out


def write_trace_csv(trace, path):
    with open(path, "w") as fh:
        fh.write("cycle,alpha,psi,psi_ratio,gmres_iterations,removed,wall_time,k_eff\n")
        for r in trace:
            fh.write(f"{r.cycle},{r.alpha:.10g},{r.psi:.12g},{r.psi_ratio:.12g},{r.iterations},"
                     f"{r.removed},{r.wall_time:.3f},{r.k_eff:.12g}\n")
