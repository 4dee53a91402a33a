"""Experiment configuration: JSON schema, semantic checks and object builders."""
from __future__ import annotations

import zlib

import jsonschema
import numpy as np

from .geometry import RegionMask
from .kernels import (
    Kernel,
    build_admissible,
    build_finite_propagation,
    build_prescribed_decay,
    build_separable_schwartz,
    gaussian_kernel,
    separable_bump,
)
from .torus import GridSpec

EXPERIMENTS = ("solve", "dn", "alessandrini", "runge", "stability", "condition", "recover", "chain")

_intervals = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "properties": {"lo": {"type": "number"}, "hi": {"type": "number"}},
        "required": ["lo", "hi"],
        "additionalProperties": False,
    },
}

_bump = {
    "type": "object",
    "properties": {
        "center": {"type": "number"},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number"},
        "inside_omega": {"type": "boolean"},
    },
    "required": ["width", "amplitude"],
    "additionalProperties": False,
}

_kernel = {
    "type": "object",
    "properties": {
        "builder": {"enum": ["zero", "finite_propagation", "prescribed_decay", "admissible",
                             "separable_schwartz", "gaussian"]},
        "R": {"type": "number", "exclusiveMinimum": 0},
        "amplitude": {"type": "number"},
        "rate": {"type": "number", "exclusiveMinimum": 0},
        "quadratic_rate": {"type": "number", "minimum": 0},
        "center_width": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "growth": {"enum": ["linear", "log"]},
        "k1_width": {"type": "number", "exclusiveMinimum": 0},
        "k2_width": {"type": "number", "exclusiveMinimum": 0},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "bump": _bump,
    },
    "required": ["builder"],
    "additionalProperties": False,
}

_params = {
    "type": "object",
    "properties": {
        "basis_size": {"type": "integer", "minimum": 1},
        "trials": {"type": "integer", "minimum": 1},
        "window": {"enum": ["w1", "w2"]},
        "n_eps_rel": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                      "minItems": 1},
        "n_eps_schedule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                           "minItems": 1},
        "delta": {"type": "number"},
        "probe_count": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "max_rel_err": {"type": "number", "exclusiveMinimum": 0},
        "deconvolve": {"type": "boolean"},
        "family_size": {"type": "integer", "minimum": 1},
        "radii": {
            "type": "object",
            "properties": {"start": {"type": "number", "minimum": 0},
                           "stop": {"type": "number", "exclusiveMinimum": 0},
                           "num": {"type": "integer", "minimum": 2}},
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
        "c_M": {"type": "number", "exclusiveMinimum": 0},
        "sigma_M": {"type": "number", "exclusiveMinimum": 0},
        "exterior_center": {"type": "number"},
        "exterior_half_width": {"type": "number", "exclusiveMinimum": 0},
        "source_amplitude": {"type": "number"},
        "r_W": {"type": "number"},
        "x_W": {"type": "number"},
        "r_Omega": {"type": "number"},
        "x_Omega": {"type": "number"},
        "h": {"type": "number"},
        "c_ns": {"type": "number", "exclusiveMinimum": 0},
        "c_scale": {"type": "number", "exclusiveMinimum": 0},
        "n_omega": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "grid": {
            "type": "object",
            "properties": {"L": {"type": "number", "exclusiveMinimum": 0},
                           "N": {"type": "integer"}},
            "required": ["L", "N"],
            "additionalProperties": False,
        },
        "s": {"type": "number"},
        "omega": _intervals,
        "w1": _intervals,
        "w2": _intervals,
        "kernel1": _kernel,
        "kernel2": _kernel,
        "params": _params,
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string", "minLength": 1},
    },
    "required": ["experiment", "out_dir"],
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"experiment": {"not": {"const": "chain"}}}},
            "then": {"required": ["grid", "s", "omega", "kernel1"]},
        },
        {
            "if": {"properties": {"experiment": {"enum": ["dn", "alessandrini", "recover"]}}},
            "then": {"required": ["w1", "w2"]},
        },
        {
            "if": {"properties": {"experiment": {"enum": ["alessandrini", "recover"]}}},
            "then": {"required": ["kernel2"]},
        },
        {
            "if": {"properties": {"experiment": {"const": "chain"}}},
            "then": {"properties": {"params": {"required": ["r_W", "x_W", "r_Omega", "x_Omega", "h"]}},
                     "required": ["params"]},
        },
    ],
}


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def violations(cfg) -> list[str]:
    """Every schema and semantic violation of a parsed configuration."""
    out = [f"{_path(e)}: {e.message}" for e in
           sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg), key=str)]
    if not isinstance(cfg, dict):
        return out
    grid = cfg.get("grid")
    if isinstance(grid, dict) and isinstance(grid.get("N"), int):
        N = grid["N"]
        if N < 16 or N & (N - 1):
            out.append("grid/N: N must be a power of two and at least 16")
    s = cfg.get("s")
    if isinstance(s, (int, float)) and not 0 < s < 1:
        out.append("s: s must lie in (0,1)")
    params = cfg.get("params") or {}
    delta = params.get("delta") if isinstance(params, dict) else None
    if isinstance(delta, (int, float)) and not 0.5 < delta < 1:
        out.append("params/delta: delta must lie in (1/2,1)")
    if isinstance(params, dict) and cfg.get("experiment") == "chain":
        r_W, h = params.get("r_W"), params.get("h")
        if isinstance(r_W, (int, float)) and not 0 < r_W <= 2:
            out.append("params/r_W: r_W must lie in (0,2]")
        if isinstance(h, (int, float)) and not 0 < h < 1:
            out.append("params/h: h must lie in (0,1)")
    if cfg.get("experiment") != "chain" and _masks_checkable(cfg):
        out += _mask_violations(cfg)
    return out


def _masks_checkable(cfg) -> bool:
    v = jsonschema.Draft202012Validator
    grid = cfg.get("grid")
    if not (v(SCHEMA["properties"]["grid"]).is_valid(grid) and "omega" in cfg):
        return False
    N = grid["N"]
    if N < 16 or N & (N - 1):
        return False
    return all(v(_intervals).is_valid(cfg[k]) for k in ("omega", "w1", "w2") if k in cfg)


def _mask_violations(cfg) -> list[str]:
    grid = make_grid(cfg)
    masks = {k: make_mask(grid, cfg[k]) for k in ("omega", "w1", "w2") if k in cfg}
    out = []
    for name, m in masks.items():
        if m.is_empty():
            out.append(f"{name}: region contains no grid nodes")
    if "omega" in masks and masks["omega"].count == grid.N:
        out.append("omega: region must be a proper subset of the torus")
    names = list(masks)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            if not masks[names[a]].isdisjoint(masks[names[b]]):
                out.append(f"{names[a]}/{names[b]}: regions overlap")
    return out


def validate(cfg) -> None:
    errs = violations(cfg)
    if errs:
        raise ConfigError(errs)


class ConfigError(ValueError):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


def make_grid(cfg) -> GridSpec:
    return GridSpec(float(cfg["grid"]["L"]), int(cfg["grid"]["N"]))


def make_mask(grid: GridSpec, intervals) -> RegionMask:
    return RegionMask.from_intervals(grid, [(d["lo"], d["hi"]) for d in intervals])


def make_kernel(grid: GridSpec, spec: dict, omega: RegionMask | None = None) -> Kernel:
    """Build a kernel from its JSON spec, adding the optional omega bump."""
    b = spec["builder"]
    amp = spec.get("amplitude", 1.0)
    if b == "zero":
        K = Kernel.zero(grid)
    elif b == "finite_propagation":
        R = spec.get("R", 1.0)
        K = build_finite_propagation(grid, R, lambda d: amp * np.ones_like(d))
    elif b == "prescribed_decay":
        rate = spec.get("rate", 1.0)
        quad = spec.get("quadratic_rate", 0.0)
        K = build_prescribed_decay(grid, lambda r: amp * np.exp(-rate * r - quad * r**2),
                                   center_width=spec.get("center_width", 1.0))
    elif b == "admissible":
        c, sig = spec.get("c", 1.0), spec.get("sigma", 1.0)
        growth = (lambda r: r) if spec.get("growth", "linear") == "linear" else np.log1p
        _, K = build_admissible(grid, lambda r: c, lambda r: sig, growth, scale=amp)
    elif b == "separable_schwartz":
        w1, w2 = spec.get("k1_width", 1.0), spec.get("k2_width", 0.5)
        K = build_separable_schwartz(grid, lambda x: amp * np.exp(-(x / w1) ** 2),
                                     lambda z: np.exp(-(z / w2) ** 2))
    elif b == "gaussian":
        K = gaussian_kernel(grid, spec.get("width", 1.0), amp)
    else:  # pragma: no cover - schema restricts builders
        raise ValueError(f"unknown builder {b}")
    bump = spec.get("bump")
    if bump:
        support = omega if bump.get("inside_omega", True) else None
        K = K + separable_bump(grid, bump.get("center", 0.0), bump["width"],
                               bump["amplitude"], support=support)
    return K


def stream(seed: int, name: str) -> np.random.Generator:
    """Philox stream for ``name``: SeedSequence(seed, spawn_key=(crc32(name),))."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.Philox(ss))
