"""Command-line front end: solve, optimize, periodic, bench and export."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bie import BieSystem, BoundaryConditions, BoundaryOperator, interior_stress
from .config import RunConfig, load_config
from .errors import BemTopoError, ConfigError, IoError
from .fmm import DirectBackend, FmmBackend
from .gmres import SolverConfig, gmres_solve, write_history_csv
from .kernels import Material
from .optimize import (
    compute_compliance, evaluate_fields, run_optimization, solve_grid, solve_periodic_cell, summary,
    write_trace_csv,
)
from .voxel import VoxelGrid, export_stl, export_vtk, extract_boundary, laplacian_smooth

log = logging.getLogger("bemtopo")

THREADS_ENV = "BEMTOPO_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def set_threads(flag=None):
    """Thread count for the numba kernels: --threads wins over the environment variable."""
    value = flag if flag is not None else os.environ.get(THREADS_ENV)
    if value is None:
        return None
    try:
        n = int(value)
    except ValueError as exc:
        raise ConfigError(f"thread count must be an integer, got {value!r}") from exc
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    import numba

    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


def _outdir(run: RunConfig, override=None):
    path = Path(override) if override else run.output.directory
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise IoError(f"output directory {path} is not writable")
    return path


def save_grid(grid: VoxelGrid, path):
    try:
        np.savez(path, occupancy=grid.occupancy, spacing=grid.spacing, origin=grid.origin)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_grid(path) -> VoxelGrid:
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read grid {path}: {exc}") from exc
    return VoxelGrid(data["occupancy"].astype(bool), float(data["spacing"]), data["origin"])


def _field_arrays(grid, fields):
    out = {"td": np.nan_to_num(fields.td, nan=0.0), "energy": fields.energy}
    names = ("sxx", "syy", "szz", "syz", "sxz", "sxy")
    for k, name in enumerate(names):
        a = np.zeros(grid.dims)
        a[grid.occupancy] = fields.stress[:, k]
        out[name] = a
    return out


def _write_snapshot(out, tag, grid, fields, formats):
    if "vtk" in formats:
        export_vtk(grid, _field_arrays(grid, fields), out / f"{tag}.vtk")
    if "stl" in formats:
        export_stl(extract_boundary(grid, periodic=False), out / f"{tag}.stl")


def _write_json(path, obj):
    try:
        Path(path).write_text(json.dumps(obj, indent=2, default=float) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def cmd_solve(args, run: RunConfig):
    out = _outdir(run, args.output)
    cfg = run.optimization
    grid = cfg.initial_grid()
    result = solve_grid(grid, cfg)
    bg = np.array([cfg.hydrostatic_stress] * 3 + [0.0] * 3) if cfg.periodic else None
    fields = evaluate_fields(grid, result, cfg.material, background=bg)
    formats = run.output.formats
    _write_snapshot(out, "solution", grid, fields, formats)
    if "csv" in formats:
        write_history_csv(result.solution.residuals, out / "residual.csv")
    info = {"triangles": 0 if result.mesh is None else result.mesh.n_triangles,
            "gmres_iterations": result.solution.iterations,
            "psi": compute_compliance(fields.energy, grid)}
    _write_json(out / "summary.json", info)
    print(json.dumps(info))
    return EXIT_OK


def _snapshot_hook(out, run):
    every = run.output.snapshot_every

    def hook(state):
        if every and state.cycle % every == 0:
            _write_snapshot(out, f"cycle_{state.cycle:03d}", state.grid, state.fields, run.output.formats)
    return hook


def _finish(out, run, grid, trace):
    cfg = run.optimization
    if "csv" in run.output.formats:
        write_trace_csv(trace, out / "trace.csv")
    save_grid(grid, out / "grid.npz")
    info = summary(cfg, grid, trace)
    _write_json(out / "summary.json", info)
    print(json.dumps(info))
    return EXIT_OK


def cmd_optimize(args, run: RunConfig):
    out = _outdir(run, args.output)
    run.optimization.on_cycle = _snapshot_hook(out, run)
    grid, trace = run_optimization(run.optimization)
    return _finish(out, run, grid, trace)


def cmd_periodic(args, run: RunConfig):
    if not run.optimization.periodic:
        raise ConfigError("periodic runs need fmm.periodic = true")
    out = _outdir(run, args.output)
    run.optimization.on_cycle = _snapshot_hook(out, run)
    grid, _, trace = solve_periodic_cell(run.optimization)
    return _finish(out, run, grid, trace)


def bench_case(n, backend_name, material=None, solver=None):
    """Patch problem on an n^3 cube: timings of the surface solve and the voxel-centre evaluation."""
    mat = material or Material(1.0, 0.3)
    grid = VoxelGrid.full((n, n, n), 1.0 / n)
    mesh = extract_boundary(grid)
    backend = DirectBackend(mat) if backend_name == "direct" else FmmBackend(mat, order=6, leaf_size=256)
    t0 = time.perf_counter()
    op = BoundaryOperator(mesh, mat, backend)
    bc = BoundaryConditions.traction_free(mesh.n_triangles)
    bc.values[mesh.face == 0] = [-1.0, 0.0, 0.0]
    bc.values[mesh.face == 1] = [1.0, 0.0, 0.0]
    system = BieSystem(op, bc)
    x, hist = gmres_solve(system.matvec_A, system.rhs(), solver or SolverConfig(1e-4))
    t1 = time.perf_counter()
    u, t = system.assemble(x)
    interior_stress(op, u, t, grid.centers(), backend)
    t2 = time.perf_counter()
    return {"size": n, "backend": backend_name, "triangles": mesh.n_triangles, "iterations": len(hist) - 1,
            "solve_time": t1 - t0, "eval_time": t2 - t1}


def cmd_bench(args, run=None):
    if not args.sizes:
        raise ConfigError("bench needs at least one size")
    if not args.backends:
        raise ConfigError("bench needs at least one backend")
    rows = [bench_case(n, b) for n in args.sizes for b in args.backends]
    cols = ["size", "backend", "triangles", "iterations", "solve_time", "eval_time"]
    try:
        fh = open(args.output, "w", newline="") if args.output else sys.stdout
    except OSError as exc:
        raise IoError(str(exc)) from exc
    w = csv.DictWriter(fh, cols)
    w.writeheader()
    w.writerows(rows)
    if fh is not sys.stdout:
        fh.close()
    return EXIT_OK


def cmd_export(args, run=None):
    grid = load_grid(args.grid)
    if args.format == "vtk":
        export_vtk(grid, path=args.output)
    else:
        mesh = extract_boundary(grid, keep_largest=True)
        if args.smooth:
            mesh = laplacian_smooth(mesh, args.smooth)
        export_stl(mesh, args.output)
    return EXIT_OK


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="bemtopo", description=__doc__)
    p.add_argument("--version", action="version", version=f"bemtopo {__version__}")
    p.add_argument("--threads", type=int, default=None, help=f"worker threads (overrides ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, text in (("solve", cmd_solve, "one boundary solve and field evaluation"),
                           ("optimize", cmd_optimize, "hard-kill topology optimization"),
                           ("periodic", cmd_periodic, "maximum bulk modulus unit cell")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--validate-only", action="store_true", help="check the config and exit")
        s.add_argument("-o", "--output", default=None, help="output directory (overrides the config)")
        s.set_defaults(func=fn, needs_config=True)
    b = sub.add_parser("bench", help="timing table for surface solve and volume evaluation")
    b.add_argument("--sizes", type=_positive_int, nargs="*", default=[8, 16])
    b.add_argument("--backends", nargs="*", choices=["direct", "fmm"], default=["direct", "fmm"])
    b.add_argument("-o", "--output", default=None, help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench, needs_config=False)
    e = sub.add_parser("export", help="convert a saved grid (.npz) to STL or VTK")
    e.add_argument("grid")
    e.add_argument("-f", "--format", choices=["stl", "vtk"], default="stl")
    e.add_argument("--smooth", type=int, default=0, help="Laplacian smoothing iterations (STL only)")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_export, needs_config=False)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        set_threads(args.threads)
        run = None
        if args.needs_config:
            run = load_config(args.config)
            if args.validate_only:
                print(f"{args.config}: ok")
                return EXIT_OK
        return args.func(args, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BemTopoError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
