"""Run configuration: JSON schema, loading with diagnostics, and mapping to driver objects."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .errors import ConfigError, IoError
from .gmres import SolverConfig
from .kernels import Material
from .loads import FACE_NAMES, LOAD_TYPES, Load
from .optimize import BackendSpec, OptimizationConfig

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["domain", "material"],
    "properties": {
        "domain": {
            "type": "object", "additionalProperties": False, "required": ["dims", "spacing"],
            "properties": {
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1},
                         "minItems": 3, "maxItems": 3},
                "spacing": _pos,
            },
        },
        "material": {
            "type": "object", "additionalProperties": False, "required": ["E", "nu"],
            "properties": {"E": _pos, "nu": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 0.5}},
        },
        "loads": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["type", "value"],
                "properties": {
                    "type": {"enum": list(LOAD_TYPES)},
                    "value": _vec3,
                    "region": {
                        "type": "object", "additionalProperties": False,
                        "properties": {
                            "face": {"enum": list(FACE_NAMES)},
                            "box": {"type": "array", "items": _vec3, "minItems": 2, "maxItems": 2},
                        },
                    },
                    "point": _vec3,
                    "radius": _pos,
                },
            },
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "restart": {"type": "integer", "minimum": 1},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "fmm": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "order": {"type": "integer", "minimum": 3},
                "leaf_size": {"type": "integer", "minimum": 1},
                "periodic": {"type": "boolean"},
            },
        },
        "optimize": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "C": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "alpha_c": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_cycles": {"type": "integer", "minimum": 0},
                "R_c": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                "hydrostatic_stress": {"type": "number"},
                "single_iteration": {"type": "boolean"},
                "max_removal": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "freeze_loaded": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["vtk", "stl", "csv"]}, "uniqueItems": True},
                "snapshot_every": {"type": "integer", "minimum": 0},
            },
        },
    },
}


@dataclass
class OutputConfig:
    directory: Path = Path("out")
    formats: tuple = ("vtk", "csv")
    snapshot_every: int = 1


@dataclass
class RunConfig:
    optimization: OptimizationConfig
    output: OutputConfig = field(default_factory=OutputConfig)
    raw: dict = field(default_factory=dict)


def parse_json(text, source="<config>"):
    """json.loads with a line/column diagnostic on failure."""
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def validate(doc):
    """Schema check; the first violation is reported with its JSON path."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    loads = doc.get("loads", [])
    for i, ld in enumerate(loads):
        if ld["type"] == "point_force" and "point" not in ld:
            raise ConfigError(f"invalid config at loads/{i}: point_force needs a point")
    return doc


def from_dict(doc) -> RunConfig:
    validate(doc)
    dom, mat = doc["domain"], doc["material"]
    sol, fmm = doc.get("solver", {}), doc.get("fmm", {})
    opt, out = doc.get("optimize", {}), doc.get("output", {})
    try:
        cfg = OptimizationConfig(
            dims=tuple(dom["dims"]),
            spacing=float(dom["spacing"]),
            material=Material(float(mat["E"]), float(mat["nu"])),
            loads=[Load.from_dict(ld) for ld in doc.get("loads", [])],
            threshold_fraction=opt.get("C", 0.02),
            target_volume_fraction=opt.get("alpha_c", 0.6),
            max_cycles=opt.get("max_cycles", 20),
            periodic=fmm.get("periodic", False),
            initial_radius=opt.get("R_c", 0.2),
            hydrostatic_stress=opt.get("hydrostatic_stress", 1.0),
            single_iteration=opt.get("single_iteration", False),
            max_removal=opt.get("max_removal", 0.2),
            freeze_loaded=opt.get("freeze_loaded", True),
            solver=SolverConfig(sol.get("tol", 1e-4), sol.get("restart", 100), sol.get("max_iter", 1000)),
            backend=BackendSpec(fmm.get("enabled", True), fmm.get("order", 6), fmm.get("leaf_size", 512)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if cfg.periodic and not cfg.backend.fmm:
        raise ConfigError("invalid config: periodic cells need fmm.enabled = true")
    output = OutputConfig(Path(out.get("directory", "out")), tuple(out.get("formats", ("vtk", "csv"))),
                          out.get("snapshot_every", 1))
    return RunConfig(cfg, output, doc)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return from_dict(parse_json(text, str(path)))


def shipped_configs():
    """Paths of the example configurations installed with the package."""
    return sorted((Path(__file__).parent / "configs").glob("*.json"))
