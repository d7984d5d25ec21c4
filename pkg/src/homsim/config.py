"""Simulation configuration: JSON schema, expression grammar, factories.

A configuration file fully determines a run: phase geometry, material laws,
scale separation epsilon, mesh targets, time grid, sources/boundary/initial
data, the representative-temperature table, and output paths.  Sources and
boundary data are constants or small arithmetic expressions over (x1, x2, t)
compiled through an AST whitelist (no general eval).
"""

from __future__ import annotations

import ast
import json
import math

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover - jsonschema is a declared dependency
    jsonschema = None

from .macro import ProblemData, TimeGrid
from .materials import EXAMPLE_LAWS, MaterialLaw, QUANTITIES
from .mesh import INCLUSION, MATRIX, PhaseGeometry


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# expression grammar: +, -, *, /, **, unary -, parentheses, a few functions,
# numeric literals and the names x1, x2, t, pi
# ---------------------------------------------------------------------------

_ALLOWED_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
}
_ALLOWED_NAMES = {"x1", "x2", "t", "pi"}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Num, ast.Constant, ast.Name,
    ast.Load, ast.Call, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow,
    ast.USub, ast.UAdd,
)


def compile_expression(src):
    """Compile a constant or expression string to f(points, t) -> (npts,)."""
    if isinstance(src, (int, float)):
        val = float(src)
        return lambda pts, t: np.full(len(pts), val)
    if not isinstance(src, str):
        raise ConfigError(f"expression must be a number or string, got {type(src).__name__}")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"cannot parse expression {src!r}: {e}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(f"disallowed syntax {type(node).__name__!r} in expression {src!r}")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_NAMES and node.id not in _ALLOWED_FUNCS:
            raise ConfigError(f"unknown name {node.id!r} in expression {src!r} "
                              f"(allowed: {sorted(_ALLOWED_NAMES | set(_ALLOWED_FUNCS))})")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _ALLOWED_FUNCS:
                raise ConfigError(f"only {sorted(_ALLOWED_FUNCS)} may be called in {src!r}")
            if node.keywords or len(node.args) != 1:
                raise ConfigError(f"functions take exactly one positional argument in {src!r}")
    code = compile(tree, "<config-expression>", "eval")
    env = dict(_ALLOWED_FUNCS, pi=math.pi)

    def fn(pts, t):
        pts = np.asarray(pts, float)
        loc = dict(env, x1=pts[:, 0], x2=pts[:, 1], t=t)
        out = eval(code, {"__builtins__": {}}, loc)
        return np.broadcast_to(np.asarray(out, float), (len(pts),)).copy()

    return fn


def _vector_expression(pair):
    """Two scalar expressions -> f(points, t) -> (npts, 2)."""
    if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
        raise ConfigError(f"vector data needs exactly two components, got {pair!r}")
    f1, f2 = (compile_expression(p) for p in pair)
    return lambda pts, t: np.stack([f1(pts, t), f2(pts, t)], axis=-1)


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

_expr = {"type": ["number", "string"]}
_vec = {"type": "array", "items": _expr, "minItems": 2, "maxItems": 2}
_law_entry = {
    "type": "object",
    "properties": {q: {"type": "array", "items": {"type": "number"},
                       "minItems": 2, "maxItems": 2} for q in QUANTITIES},
    "required": list(QUANTITIES),
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "geometry": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["disk", "stripe", "none"]},
                "radius": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
                "fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["kind"],
        },
        "materials": {
            "type": "object",
            "properties": {
                "matrix": _law_entry,
                "inclusion": _law_entry,
                "T_range": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 2},
                "plane": {"enum": ["strain", "stress"]},
            },
            "required": ["matrix", "inclusion"],
        },
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "mesh": {
            "type": "object",
            "properties": {
                "macro_h": {"type": "number", "exclusiveMinimum": 0},
                "cell_h": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["macro_h", "cell_h"],
        },
        "time": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T_final": {"type": "number", "exclusiveMinimum": 0},
                "snapshot_stride": {"type": "integer", "minimum": 1},
            },
            "required": ["dt", "T_final"],
        },
        "sources": {
            "type": "object",
            "properties": {"f_T": _expr, "f_Phi": _expr, "f_U": _vec},
            "required": ["f_T", "f_Phi", "f_U"],
        },
        "boundary": {
            "type": "object",
            "properties": {"T": _expr, "Phi": _expr, "U": _vec},
            "required": ["T", "Phi", "U"],
        },
        "initial": {
            "type": "object",
            "properties": {
                "T": {"type": "number"},
                "T_ref": {"type": "number"},
                "U": _vec,
                "V": _vec,
            },
            "required": ["T", "T_ref"],
        },
        "table": {
            "type": "object",
            "properties": {
                "T_min": {"type": "number"},
                "T_max": {"type": "number"},
                "count": {"type": "integer", "minimum": 2},
                "cell_bc": {"enum": ["dirichlet", "periodic"]},
            },
            "required": ["T_min", "T_max", "count"],
        },
        "coupling_temperature": {"enum": ["scheme", "reference"]},
        "output": {
            "type": "object",
            "properties": {
                "directory": {"type": "string"},
                "vtk": {"type": "boolean"},
            },
        },
    },
    "required": ["version", "geometry", "materials", "epsilon", "mesh",
                 "time", "sources", "boundary", "initial", "table"],
    "additionalProperties": False,
}


def _json_path(err):
    return "$" + "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]" for p in err.absolute_path)


class SimulationConfig:
    """Validated configuration with factories for the solver objects."""

    def __init__(self, raw: dict):
        if jsonschema is not None:
            errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw),
                            key=lambda e: list(e.absolute_path))
            if errors:
                msgs = "; ".join(f"{_json_path(e)}: {e.message}" for e in errors)
                raise ConfigError(f"configuration invalid: {msgs}")
        self.raw = raw
        eps = raw["epsilon"]
        q = round(1.0 / eps)
        if abs(q * eps - 1.0) > 1e-12:
            raise ConfigError(f"$['epsilon']: must be a reciprocal integer, got {eps}")
        self.epsilon = float(eps)
        dt, Tf = raw["time"]["dt"], raw["time"]["T_final"]
        n = round(Tf / dt)
        if abs(n * dt - Tf) > 1e-9 * Tf:
            raise ConfigError(f"$['time']: dt*N must equal T_final (dt={dt}, T_final={Tf})")
        self.n_steps = int(n)
        tb = raw["table"]
        if not tb["T_min"] < tb["T_max"]:
            raise ConfigError("$['table']: T_min must be below T_max")

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON: {e}") from None
        return cls(raw)

    # -- factories -------------------------------------------------------
    def geometry(self) -> PhaseGeometry:
        g = self.raw["geometry"]
        kw = {}
        if "radius" in g:
            kw["radius"] = g["radius"]
        if "fraction" in g:  # centered stripe of the given volume fraction
            f = g["fraction"]
            kw["band"] = (0.5 * (1.0 - f), 0.5 * (1.0 + f))
        geom = PhaseGeometry(g["kind"], **kw)
        geom.validate()
        return geom

    def law(self) -> MaterialLaw:
        m = self.raw["materials"]
        coeffs = {
            MATRIX: {q: tuple(v) for q, v in m["matrix"].items()},
            INCLUSION: {q: tuple(v) for q, v in m["inclusion"].items()},
        }
        kw = {}
        if "T_range" in m:
            kw["T_range"] = tuple(m["T_range"])
        if "plane" in m:
            kw["plane"] = m["plane"]
        return MaterialLaw(coeffs=coeffs, **kw)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(dt=self.raw["time"]["dt"], n_steps=self.n_steps)

    def snapshot_stride(self) -> int:
        return int(self.raw["time"].get("snapshot_stride", 1))

    def problem_data(self) -> ProblemData:
        s, b, i = self.raw["sources"], self.raw["boundary"], self.raw["initial"]
        zero_vec = _vector_expression([0.0, 0.0])
        return ProblemData(
            f_T=compile_expression(s["f_T"]),
            f_Phi=compile_expression(s["f_Phi"]),
            f_U=_vector_expression(s["f_U"]),
            bc_T=compile_expression(b["T"]),
            bc_Phi=compile_expression(b["Phi"]),
            bc_U=_vector_expression(b["U"]),
            T_init=float(i["T"]),
            U_init=_vector_expression(i["U"]) if "U" in i else zero_vec,
            V_init=_vector_expression(i["V"]) if "V" in i else zero_vec,
            coupling_temperature=self.raw.get("coupling_temperature", "scheme"),
        )

    @property
    def T_ref(self) -> float:
        return float(self.raw["initial"]["T_ref"])

    @property
    def table_spec(self):
        tb = self.raw["table"]
        return (float(tb["T_min"]), float(tb["T_max"]), int(tb["count"]),
                tb.get("cell_bc", "dirichlet"))

    @property
    def mesh_targets(self):
        return (float(self.raw["mesh"]["macro_h"]), float(self.raw["mesh"]["cell_h"]))

    @property
    def output_dir(self):
        return self.raw.get("output", {}).get("directory", "out")

    @property
    def write_vtk(self) -> bool:
        return bool(self.raw.get("output", {}).get("vtk", False))

    def canonical_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def example_config() -> dict:
    """Baseline driven-composite configuration (constant sources)."""
    mat = {q: list(v) for q, v in EXAMPLE_LAWS[MATRIX].items()}
    inc = {q: list(v) for q, v in EXAMPLE_LAWS[INCLUSION].items()}
    return {
        "version": 1,
        "geometry": {"kind": "disk", "radius": 0.25},
        "materials": {"matrix": mat, "inclusion": inc},
        "epsilon": 0.1,
        "mesh": {"macro_h": 0.05, "cell_h": 0.12},
        "time": {"dt": 0.001, "T_final": 1.0, "snapshot_stride": 100},
        "sources": {"f_T": 20000.0, "f_Phi": 200.0, "f_U": [5000.0, 5000.0]},
        "boundary": {"T": 300.0, "Phi": 0.0, "U": [0.0, 0.0]},
        "initial": {"T": 300.0, "T_ref": 300.0},
        "table": {"T_min": 250.0, "T_max": 900.0, "count": 10},
        "output": {"directory": "out", "vtk": False},
    }
