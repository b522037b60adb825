import csv
import json

import numpy as np
import pytest

from bemtopo import __version__
from bemtopo.cli import THREADS_ENV, load_grid, main, save_grid, set_threads
from bemtopo.config import SCHEMA, from_dict, load_config, parse_json, shipped_configs
from bemtopo.errors import ConfigError
from bemtopo.voxel import VoxelGrid, read_stl, read_vtk_scalars


def patch_doc(tmp_path, n=2):
    return {
        "domain": {"dims": [n, n, n], "spacing": 1.0 / n},
        "material": {"E": 1.0, "nu": 0.3},
        "loads": [{"type": "neumann", "value": [-1, 0, 0], "region": {"face": "x-"}},
                  {"type": "neumann", "value": [1, 0, 0], "region": {"face": "x+"}}],
        "solver": {"tol": 1e-6},
        "fmm": {"enabled": False},
        "output": {"directory": str(tmp_path / "out"), "formats": ["vtk", "csv"]},
    }


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    return str(p)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_shipped_configs_validate():
    names = {p.stem for p in shipped_configs()}
    assert {"cantilever_symmetric", "cantilever_asymmetric", "torsion", "periodic_bulk"} <= names
    for p in shipped_configs():
        assert main(["optimize", str(p), "--validate-only"]) == 0
        load_config(p)


def test_schema_rejects_unknown_keys(tmp_path, capsys):
    doc = patch_doc(tmp_path)
    doc["solver"]["precond"] = "ilu"
    assert main(["solve", write(tmp_path, doc), "--validate-only"]) == 1
    assert "precond" in capsys.readouterr().err
    doc = patch_doc(tmp_path)
    doc["extra"] = {}
    with pytest.raises(ConfigError):
        from_dict(doc)
    doc = patch_doc(tmp_path)
    doc["loads"].append({"type": "point_force", "value": [0, 0, 1]})
    with pytest.raises(ConfigError, match="point"):
        from_dict(doc)
    assert SCHEMA["additionalProperties"] is False


def test_malformed_json_reports_position(tmp_path, capsys):
    path = write(tmp_path, '{\n  "domain": {"dims": [2, 2, 2],\n  "spacing": }\n}')
    assert main(["solve", path]) == 1
    err = capsys.readouterr().err
    assert "line 3" in err and "column" in err
    with pytest.raises(ConfigError, match="line 1, column 2"):
        parse_json("{,}")


def test_missing_config_and_unwritable_output(tmp_path):
    assert main(["solve", str(tmp_path / "nope.json")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("x")
    doc = patch_doc(tmp_path)
    doc["output"]["directory"] = str(blocker / "sub")
    assert main(["solve", write(tmp_path, doc)]) == 3


def test_solver_failure_exit_code(tmp_path):
    doc = patch_doc(tmp_path)
    doc["solver"] = {"tol": 1e-12, "max_iter": 1, "restart": 1}
    assert main(["solve", write(tmp_path, doc)]) == 2


def test_solve_patch(tmp_path, capsys):
    assert main(["solve", write(tmp_path, patch_doc(tmp_path, 3))]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["gmres_iterations"] <= 20
    out = tmp_path / "out"
    _, fields = read_vtk_scalars((out / "solution.vtk").read_bytes())
    assert np.allclose(fields["sxx"], 1.0, atol=0.05)
    assert np.abs(fields["syy"]).max() < 0.05
    rows = list(csv.reader((out / "residual.csv").open()))
    assert rows[0] == ["iteration", "relative_residual"] and len(rows) == info["gmres_iterations"] + 2


def test_solve_is_bitwise_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--threads", "1", "solve", write(tmp_path, patch_doc(tmp_path)), "-o", str(d)]) == 0
    assert (a / "solution.vtk").read_bytes() == (b / "solution.vtk").read_bytes()


def test_optimize_small(tmp_path, capsys):
    doc = patch_doc(tmp_path, 4)
    doc["loads"] = [{"type": "dirichlet", "value": [0, 0, 0], "region": {"face": "x-"}},
                    {"type": "point_force", "value": [0, 0, -1], "region": {"face": "x+"},
                     "point": [1, 0.5, 0.5]}]
    doc["optimize"] = {"C": 0.05, "alpha_c": 0.8, "max_cycles": 2}
    doc["output"]["formats"] = ["vtk", "stl", "csv"]
    assert main(["optimize", write(tmp_path, doc)]) == 0
    info = json.loads(capsys.readouterr().out)
    out = tmp_path / "out"
    rows = list(csv.DictReader((out / "trace.csv").open()))
    assert len(rows) == info["cycles"] + 1
    assert (out / "cycle_000.vtk").exists() and (out / "cycle_000.stl").exists()
    grid = load_grid(out / "grid.npz")
    assert grid.material_count() == info["material_voxels"]
    stl = tmp_path / "final.stl"
    assert main(["export", str(out / "grid.npz"), "-o", str(stl), "--smooth", "3"]) == 0
    normals, _ = read_stl(stl.read_bytes())
    assert len(normals) > 0
    assert main(["export", str(tmp_path / "missing.npz"), "-o", str(stl)]) == 3


def test_periodic_needs_flag(tmp_path):
    assert main(["periodic", write(tmp_path, patch_doc(tmp_path))]) == 1


def test_bench(tmp_path, capsys):
    assert main(["bench", "--sizes"]) == 1
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "2", "3", "--backends", "direct", "-o", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [(r["size"], r["backend"]) for r in rows] == [("2", "direct"), ("3", "direct")]
    assert all(float(r["solve_time"]) > 0 and float(r["eval_time"]) > 0 for r in rows)


def test_threads_flag_wins(monkeypatch):
    import numba

    monkeypatch.setenv(THREADS_ENV, "1")
    assert set_threads() == 1
    assert set_threads(numba.config.NUMBA_NUM_THREADS) == numba.config.NUMBA_NUM_THREADS
    monkeypatch.setenv(THREADS_ENV, "x")
    with pytest.raises(ConfigError):
        set_threads()
    monkeypatch.delenv(THREADS_ENV)
    assert set_threads() is None


def test_grid_roundtrip(tmp_path):
    occ = np.random.default_rng(0).random((3, 4, 5)) < 0.5
    g = VoxelGrid(occ, 0.3, np.array([1.0, 2.0, 3.0]))
    save_grid(g, tmp_path / "g.npz")
    h = load_grid(tmp_path / "g.npz")
    assert np.array_equal(h.occupancy, occ) and h.spacing == 0.3 and np.allclose(h.origin, [1, 2, 3])


def lateral_void_components(occ):
    """Void components on each of the four faces parallel to the x axis."""
    from scipy import ndimage

    faces = (occ[:, 0, :], occ[:, -1, :], occ[:, :, 0], occ[:, :, -1])
    return [ndimage.label(~f)[1] for f in faces]


def test_shipped_torsion_first_cycle(tmp_path, capsys):
    doc = json.loads(next(p for p in shipped_configs() if p.stem == "torsion").read_text())
    doc["optimize"]["max_cycles"] = 1
    doc["output"]["directory"] = str(tmp_path / "torsion")
    assert main(["optimize", write(tmp_path, doc)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["cycles"] == 1 and info["psi_ratio"] >= 1.0
    grid = load_grid(tmp_path / "torsion" / "grid.npz")
    assert all(n >= 4 for n in lateral_void_components(grid.occupancy))
    # removal follows the square-section torsion field: the core goes first, the walls stay
    occ = grid.occupancy
    assert (~occ[:, 8:16, 8:16]).mean() > 0.5 and occ[:, 2:-2, 0].mean() > 0.9


def test_shipped_periodic(tmp_path, capsys):
    p = next(p for p in shipped_configs() if p.stem == "periodic_bulk")
    assert main(["periodic", str(p), "-o", str(tmp_path / "cell")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["cycles"] == 1 and abs(info["alpha"] - 0.7) < 1e-3
    assert 0 < info["k_eff"] <= 1.005 * info["hs_upper_bound"]
    assert info["k_eff_over_bound"] == pytest.approx(info["k_eff"] / info["hs_upper_bound"])
