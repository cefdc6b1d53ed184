"""Experiment configuration: JSON schema, defaults and invariant checks.

``parse_config`` returns an :class:`ExperimentConfig` whose ``resolved``
mapping holds every default filled in; dumping it with :func:`dump_config`
and parsing again gives an equal config.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Any

import jsonschema
import numpy as np

from .bohmian import EnsembleSpec
from .grid_field import GridError, GridSpec, PacketParams, Region
from .stochastic import ParamDensity, PointerModel, marginal_from_dict

SCENARIOS = ("stern_gerlach", "two_slit", "epr", "point_localisation")
TWO_PI = 2 * np.pi


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending entry."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


_number = {"type": "number"}
_vec = {"type": "array", "items": _number, "minItems": 1, "maxItems": 2}
_complex = {"oneOf": [_number, {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}]}
_marginal = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["uniform", "gaussian", "fixed", "tied"]},
        "low": _number, "high": _number, "mean": _number, "std": _number,
        "value": _number, "source": {"type": "integer", "minimum": 0}, "offset": _number,
    },
    "additionalProperties": False,
}
_packet = {
    "type": "object",
    "properties": {
        "weight": _complex, "phase": _number, "momentum": _vec, "center": _vec,
        "width": {"type": "number", "exclusiveMinimum": 0}, "spin": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["scenario"],
    "additionalProperties": False,
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "grid": {
            "type": "object",
            "properties": {
                "extent": _vec,
                "points": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1, "maxItems": 2},
                "hbar": {"type": "number", "exclusiveMinimum": 0},
                "mass": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "spin_dim": {"type": "integer", "minimum": 1},
        "coefficients": {"type": "array", "items": _complex, "minItems": 1},
        "packet": _packet,
        "packets": {"type": "array", "items": _packet, "minItems": 1},
        "regions": {
            "type": "object",
            "properties": {
                "boxes": {"type": "array", "minItems": 1, "items": {
                    "type": "array", "minItems": 1, "maxItems": 2,
                    "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}}},
                "labels": {"type": "array", "items": {"type": "string"}},
            },
            "required": ["boxes"],
            "additionalProperties": False,
        },
        "deflection": {
            "type": "object",
            "properties": {
                "alpha": {"oneOf": [_number, {"type": "array", "items": _number}]},
                "delta_p": {"oneOf": [_number, {"type": "array", "items": _number}]},
                "mu": {"type": ["number", "null"]}, "b0": {"type": ["number", "null"]},
                "dbdz": {"type": ["number", "null"]}, "axis": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "stochastic": {
            "type": "object",
            "properties": {"etas": {"type": "array", "items": _marginal, "minItems": 1}, "y": _marginal},
            "additionalProperties": False,
        },
        "pointer": {
            "type": "object",
            "properties": {"width": {"type": "number", "exclusiveMinimum": 0}, "k0": _number},
            "additionalProperties": False,
        },
        "ensemble": {
            "type": "object",
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "node_epsilon": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "timings": {
            "type": "object",
            "properties": {
                "t_def": {"type": "number", "minimum": 0}, "t_loc": {"type": "number", "minimum": 0},
                "tau": {"type": "number", "exclusiveMinimum": 0}, "t_end": {"type": ["number", "null"]},
                "t_screen": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "two_slit": {
            "type": "object",
            "properties": {
                "separation": {"type": "number", "exclusiveMinimum": 0},
                "localise": {"type": "boolean"},
                "window_periods": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "epr": {
            "type": "object",
            "properties": {
                "alpha": _number, "alpha_density": _marginal,
                "table_alphas": {"type": "array", "items": _number},
            },
            "additionalProperties": False,
        },
        "localisation": {
            "type": "object",
            "properties": {"eta": _number, "split_dt": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {
                "trajectories": {"type": "integer", "minimum": 0},
                "densities": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
}

_R = 1 / np.sqrt(2)

DEFAULTS: dict[str, dict] = {
    "stern_gerlach": {
        "seed": 0,
        "grid": {"extent": [128.0], "points": [1024], "hbar": 1.0, "mass": 1.0},
        "coefficients": [[_R, 0.0], [_R, 0.0]],
        "packet": {"center": [0.0], "width": 1.0, "momentum": [0.0]},
        "regions": {"boxes": [[[2.0, 38.0]], [[-38.0, -2.0]]], "labels": ["+", "-"]},
        "deflection": {"alpha": 0.0, "delta_p": 4.0, "mu": None, "b0": None, "dbdz": None, "axis": 0},
        "pointer": {"width": 1.0, "k0": 20.0},
        "ensemble": {"count": 10000, "node_epsilon": 1e-8, "dt": None},
        "timings": {"t_def": 0.0, "t_loc": 5.0, "tau": 0.01},
        "output": {"trajectories": 20, "densities": True},
    },
    "two_slit": {
        "seed": 0,
        "grid": {"extent": [512.0], "points": [2048], "hbar": 1.0, "mass": 1.0},
        "coefficients": [[_R, 0.0], [_R, 0.0]],
        "packet": {"center": [0.0], "width": 1.0, "momentum": [0.0]},
        "regions": {"boxes": [[[-23.0, -7.0]], [[7.0, 23.0]]], "labels": ["1", "2"]},
        "pointer": {"width": 1.0, "k0": 20.0},
        "timings": {"t_loc": 0.0, "tau": 0.01, "t_screen": 60.0},
        "two_slit": {"separation": 30.0, "localise": True, "window_periods": 0.6},
        "output": {"trajectories": 0, "densities": True},
    },
    "epr": {
        "seed": 0,
        "epr": {"alpha": 1.0, "alpha_density": {"kind": "uniform", "low": 0.0, "high": TWO_PI},
                "table_alphas": [0.0, np.pi / 2, np.pi]},
        "output": {"trajectories": 0, "densities": False},
    },
    "point_localisation": {
        "seed": 0,
        "grid": {"extent": [128.0], "points": [2048], "hbar": 1.0, "mass": 1.0},
        "coefficients": [[1.0, 0.0]],
        "packet": {"center": [-2.0], "width": 1.0, "momentum": [2.0]},
        "regions": {"boxes": [[[0.0, 30.0]]], "labels": ["D"]},
        "ensemble": {"count": 2000, "node_epsilon": 1e-8, "dt": None},
        "timings": {"t_loc": 1.0, "tau": 0.5, "t_end": 3.0},
        "localisation": {"eta": 5.0, "split_dt": 0.005},
        "output": {"trajectories": 20, "densities": True},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _cplx(v) -> complex:
    return complex(v) if np.ndim(v) == 0 else complex(v[0], v[1])


def _cplx_json(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration.  Typed views are derived from ``resolved``."""

    resolved: dict

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and dump_config(self) == dump_config(other)

    def __hash__(self):
        return hash(dump_config(self))

    @property
    def scenario(self) -> str:
        return self.resolved["scenario"]

    @property
    def seed(self) -> int:
        return int(self.resolved["seed"])

    def section(self, name: str) -> dict:
        return self.resolved.get(name, {})

    @property
    def grid(self) -> GridSpec:
        g = self.resolved["grid"]
        return GridSpec(tuple(g["extent"]), tuple(g["points"]), g["hbar"], g["mass"])

    @property
    def packets(self) -> list[tuple[PacketParams, int]]:
        return [(PacketParams(_cplx(p["weight"]), p["phase"], tuple(p["momentum"]), tuple(p["center"]),
                              p["width"]), p["spin"]) for p in self.resolved["packets"]]

    @property
    def spin_dim(self) -> int:
        return int(self.resolved["spin_dim"])

    @property
    def regions(self) -> Region:
        r = self.resolved["regions"]
        return Region(tuple(tuple(tuple(ax) for ax in box) for box in r["boxes"]), tuple(r["labels"]))

    @property
    def density(self) -> ParamDensity:
        return ParamDensity.from_dict(self.resolved["stochastic"])

    @property
    def pointer(self) -> PointerModel:
        p = self.resolved["pointer"]
        return PointerModel(p["width"], p["k0"])

    @property
    def ensemble(self) -> EnsembleSpec:
        e = self.resolved["ensemble"]
        return EnsembleSpec(e["count"], self.seed, e["node_epsilon"])

    @property
    def timings(self) -> dict:
        return self.resolved.get("timings", {})

    def with_seed(self, seed: int) -> "ExperimentConfig":
        d = copy.deepcopy(self.resolved)
        d["seed"] = int(seed)
        return parse_config(json.dumps(d))


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.resolved, sort_keys=True, indent=2) + "\n"


def _schema_check(data) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(e.message, path)


def _resolve_packets(d: dict) -> None:
    if "packets" in d:
        packets = d["packets"]
        d.pop("coefficients", None)
        d.pop("packet", None)
    else:
        tmpl = {"center": [0.0], "width": 1.0, "momentum": [0.0], "phase": 0.0, **d.get("packet", {})}
        packets = [{**tmpl, "weight": c, "spin": j} for j, c in enumerate(d["coefficients"])]
        d.pop("packet", None)
        d.pop("coefficients", None)
    out = []
    dims = len(d["grid"]["points"])
    for i, p in enumerate(packets):
        q = {"weight": [1.0, 0.0], "phase": 0.0, "momentum": [0.0] * dims, "center": [0.0] * dims,
             "width": 1.0, "spin": 0, **p}
        q["weight"] = _cplx_json(_cplx(q["weight"]))
        for key in ("momentum", "center"):
            if len(q[key]) != dims:
                raise ConfigError(f"{key} needs {dims} components", f"packets/{i}/{key}")
        out.append(q)
    d["packets"] = out
    d.setdefault("spin_dim", max(p["spin"] for p in out) + 1)
    if any(p["spin"] >= d["spin_dim"] for p in out):
        raise ConfigError("spin index out of range", "packets")


def _check_norm(d: dict) -> None:
    total = sum(abs(_cplx(p["weight"])) ** 2 for p in d["packets"])
    if abs(total - 1) > 1e-6:
        raise ConfigError(f"normalisation violated: sum |c|^2 = {total:.9g}, expected 1", "packets")


def _resolve_deflection(d: dict) -> None:
    dfl = d["deflection"]
    if dfl.get("mu") is not None:
        if dfl.get("b0") is not None:
            dfl["alpha"] = dfl["mu"] * dfl["b0"]
        if dfl.get("dbdz") is not None:
            dfl["delta_p"] = dfl["mu"] * dfl["dbdz"]


def _default_stochastic(d: dict, n: int) -> None:
    tau = d["timings"]["tau"]
    if "stochastic" not in d:
        d["stochastic"] = {"etas": [{"kind": "uniform", "low": 0.0, "high": TWO_PI / tau} for _ in range(n)]}
    w = d["pointer"]["width"]
    d["stochastic"].setdefault("y", {"kind": "uniform", "low": -w / 2, "high": w / 2})


def _normalise_marginal(m: dict, path: str) -> dict:
    try:
        obj = marginal_from_dict(m)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid marginal: {exc}", path) from None
    from .stochastic import marginal_to_dict

    return marginal_to_dict(obj)


def parse_config(text: str) -> ExperimentConfig:
    """Validate ``text`` (JSON) and return a fully resolved config."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    _schema_check(data)
    scenario = data["scenario"]
    d = _merge(DEFAULTS[scenario], data)
    if "packets" in data:
        d.pop("coefficients", None)
    d["seed"] = int(d["seed"])

    if scenario != "epr":
        g = d["grid"]
        if len(g["extent"]) != len(g["points"]):
            raise ConfigError("extent and points need the same number of axes", "grid")
        try:
            grid = GridSpec(tuple(g["extent"]), tuple(g["points"]), g["hbar"], g["mass"])
        except GridError as exc:
            raise ConfigError(str(exc), "grid") from None
        if scenario == "two_slit" and "packets" not in d:
            half = d["two_slit"]["separation"] / 2
            tmpl = {"center": [0.0], "width": 1.0, "momentum": [0.0], "phase": 0.0, **d.pop("packet", {})}
            d["packets"] = [{**tmpl, "weight": c, "spin": 0, "center": [x] + tmpl["center"][1:]}
                            for c, x in zip(d.pop("coefficients"), (-half, half))]
        _resolve_packets(d)
        _check_norm(d)
        r = d["regions"]
        r.setdefault("labels", [str(i + 1) for i in range(len(r["boxes"]))])
        try:
            region = Region(tuple(tuple(tuple(ax) for ax in box) for box in r["boxes"]), tuple(r["labels"]))
            region.index_bounds(grid)
        except (ValueError, GridError) as exc:
            raise ConfigError(str(exc), "regions") from None
        for i, box in enumerate(r["boxes"]):
            if len(box) != grid.dims:
                raise ConfigError(f"box needs {grid.dims} intervals", f"regions/boxes/{i}")

    t = d.get("timings", {})
    if scenario == "stern_gerlach":
        _resolve_deflection(d)
        if not t["t_def"] <= t["t_loc"]:
            raise ConfigError("stage times must increase: t_def <= t_loc", "timings")
        if len(d["regions"]["boxes"]) != d["spin_dim"]:
            raise ConfigError("one detector box per spin component is required", "regions")
        _default_stochastic(d, len(d["regions"]["boxes"]))
    elif scenario == "two_slit":
        if len(d["packets"]) != 2 or len(d["regions"]["boxes"]) != 2:
            raise ConfigError("two-slit needs exactly two packets and two boxes", "packets")
        if not t["t_loc"] < t["t_loc"] + t["tau"] <= t["t_screen"]:
            raise ConfigError("stage times must increase: t_loc < t_loc + tau <= t_screen", "timings")
        _default_stochastic(d, 2)
    elif scenario == "point_localisation":
        te = t.get("t_end")
        if te is None or not t["t_loc"] + t["tau"] <= te:
            raise ConfigError("stage times must increase: t_loc + tau <= t_end", "timings")
        if len(d["regions"]["boxes"]) != 1:
            raise ConfigError("point localisation uses a single region", "regions")
    elif scenario == "epr":
        d["epr"]["alpha_density"] = _normalise_marginal(d["epr"]["alpha_density"], "epr/alpha_density")
        for key in ("grid", "regions", "packets", "ensemble", "timings"):
            d.pop(key, None)

    if "stochastic" in d:
        st = d["stochastic"]
        st["etas"] = [_normalise_marginal(m, f"stochastic/etas/{i}") for i, m in enumerate(st["etas"])]
        st["y"] = _normalise_marginal(st["y"], "stochastic/y")
        try:
            ParamDensity.from_dict(st)
        except ValueError as exc:
            raise ConfigError(str(exc), "stochastic") from None
        if scenario != "epr" and len(st["etas"]) != len(d["regions"]["boxes"]):
            raise ConfigError("one eta marginal per detector box", "stochastic/etas")
    # round floats through JSON so a dump re-parses to the same mapping
    return ExperimentConfig(json.loads(json.dumps(d, sort_keys=True)))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def set_path(data: dict, dotted: str, value: Any) -> dict:
    """Copy of ``data`` with ``a.b.0.c`` set to ``value`` (used by sweeps)."""
    out = copy.deepcopy(data)
    keys = dotted.split(".")
    node = out
    for k in keys[:-1]:
        node = node[int(k)] if isinstance(node, list) else node.setdefault(k, {})
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return out
