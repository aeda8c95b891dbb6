"""Experiment configuration: schema, defaults and validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError

KINDS = ("kernel_check", "estimate_sweep", "nmc_eval", "flatness_pipeline", "solve_and_verify",
         "heat_solve", "perimeter", "solve")

_SINUSOIDAL_1D = {"family": "diagonal_sinusoidal", "dim": 1, "amplitude": 0.4, "scale": 1.0}
_SINE_DATA = {"family": "sinusoidal", "amplitude": 0.05, "frequency": 2.0}

DEFAULTS = {
    "kernel_check": {"dims": [1, 2], "orders": [0.3, 0.5, 0.7], "pairs": 20, "tol": 1e-6},
    "estimate_sweep": {"estimate": "effacement", "metric": _SINUSOIDAL_1D, "y": [0.3], "s": 0.5,
                       "radii": [1.0, 0.5, 0.25, 0.125], "slope_tol": 0.15},
    "nmc_eval": {"region": {"variant": "ball", "center": [0.0, 0.0], "radius": 1.0}, "points": [[1.0, 0.0]],
                 "s": 0.5, "metric": None, "route": "paired", "pv_tol": 1e-6},
    "flatness_pipeline": {"graph": {"family": "power", "exponent": 1.5}, "k_max": 8, "alpha": 0.5,
                          "samples": 20001, "delta": None, "r": 1.0},
    "solve_and_verify": {"exterior": _SINE_DATA, "s": 0.5, "tol": 1e-3, "max_iters": 5000, "h": 1 / 32,
                         "C0_factor": 1e-3, "r": 1.0, "k_max": 4, "alpha": None},
    "solve": {"exterior": _SINE_DATA, "s": 0.5, "tol": 1e-3, "max_iters": 5000, "h": 1 / 32},
    "heat_solve": {"metric": _SINUSOIDAL_1D, "source": [0.3], "t": 0.1, "h": 1 / 128, "tau": 1 / 1024,
                   "theta": 0.5},
    "perimeter": {"region": {"variant": "half_space", "normal": [1.0], "offset": 0.0},
                  "omega": {"center": [0.0], "radius": 1.0}, "s": 0.5},
}

# the first kind of a tuple is the default when the config does not declare one
SUBCOMMAND_KIND = {"kernel": ("kernel_check", "estimate_sweep"), "heat": "heat_solve", "nmc": "nmc_eval",
                   "perimeter": "perimeter", "flatness": "flatness_pipeline", "solve": "solve",
                   "verify": "solve_and_verify"}


def _require(cond, fieldname, msg):
    if not cond:
        raise ConfigError(f"{fieldname}: {msg}")


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _order_ok(s, name):
    _require(_is_num(s) and 0 < s < 1, name, f"must be a number in (0, 1), got {s!r}")


def _validate_params(kind, p):
    if kind == "kernel_check":
        _require(isinstance(p["dims"], list) and all(d in (1, 2, 3) for d in p["dims"]), "params.dims",
                 "must be a list of dimensions in {1, 2, 3}")
        _require(isinstance(p["orders"], list) and p["orders"], "params.orders", "must be a nonempty list")
        for i, s in enumerate(p["orders"]):
            _order_ok(s, f"params.orders[{i}]")
        _require(isinstance(p["pairs"], int) and p["pairs"] > 0, "params.pairs", "must be a positive integer")
    elif kind == "estimate_sweep":
        _require(p["estimate"] in ("effacement", "measure", "dirichlet", "tail"), "params.estimate",
                 "must be one of effacement, measure, dirichlet, tail")
        _require(isinstance(p["metric"], dict) and "family" in p["metric"], "params.metric",
                 "must be a metric family mapping")
        _order_ok(p["s"], "params.s")
        _require(isinstance(p["radii"], list) and len(p["radii"]) >= 2
                 and all(_is_num(r) and r > 0 for r in p["radii"]), "params.radii",
                 "must list at least two positive radii")
    elif kind == "nmc_eval":
        _order_ok(p["s"], "params.s")
        _require(isinstance(p["region"], dict) and "variant" in p["region"], "params.region",
                 "must be a region mapping with a variant")
        _require(p["route"] in ("paired", "unpaired", "graph"), "params.route",
                 "must be paired, unpaired or graph")
        _require(isinstance(p["points"], list) and p["points"], "params.points", "must be a nonempty list")
    elif kind in ("solve", "solve_and_verify"):
        _order_ok(p["s"], "params.s")
        _require(isinstance(p["exterior"], dict), "params.exterior", "must be an exterior-data mapping")
        _require(_is_num(p["tol"]) and p["tol"] > 0, "params.tol", "must be positive")
        _require(isinstance(p["max_iters"], int) and p["max_iters"] > 0, "params.max_iters",
                 "must be a positive integer")
        _require(_is_num(p["h"]) and 0 < p["h"] <= 0.25, "params.h", "must lie in (0, 1/4]")
    elif kind == "flatness_pipeline":
        _require(isinstance(p["k_max"], int) and p["k_max"] >= 1, "params.k_max", "must be an integer >= 1")
        _require(_is_num(p["alpha"]) and p["alpha"] > 0, "params.alpha", "must be positive")
        _require(isinstance(p["graph"], dict) and "family" in p["graph"], "params.graph",
                 "must be a graph mapping with a family")
    elif kind == "heat_solve":
        _require(_is_num(p["t"]) and p["t"] > 0, "params.t", "must be positive")
        _require(_is_num(p["h"]) and p["h"] > 0, "params.h", "must be positive")
        _require(_is_num(p["theta"]) and 0.5 <= p["theta"] <= 1, "params.theta", "must lie in [0.5, 1]")
    elif kind == "perimeter":
        _order_ok(p["s"], "params.s")
        _require(isinstance(p["omega"], dict) and "radius" in p["omega"], "params.omega",
                 "must be a ball mapping with center and radius")


@dataclass
class ExperimentConfig:
    """Resolved experiment: ``kind``, module ``params``, ``seed`` and output directory."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    calibration: str | None = None

    def resolved(self):
        """Plain mapping of the whole configuration (reports embed it)."""
        return {"kind": self.kind, "params": self.params, "seed": self.seed}

    def sha256(self):
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def validate(raw, kind=None, seed=None, out=None, jobs=None, calibration=None):
    """Merge ``raw`` over the defaults of its kind and check every field.

    ``kind`` is the kind a subcommand runs, or a tuple of accepted kinds
    whose first entry is the default.

    Raises :class:`ConfigError` naming the first failing field.
    """
    raw = {} if raw is None else copy.deepcopy(raw)
    _require(isinstance(raw, dict), "config", "must be a mapping")
    allowed = (kind,) if isinstance(kind, str) else kind
    k = raw.get("kind", allowed[0] if allowed else None)
    _require(k in KINDS, "kind", f"must be one of {KINDS}, got {k!r}")
    if allowed and k not in allowed:
        raise ConfigError(f"kind: config declares {k!r} but the subcommand runs {' or '.join(allowed)}")
    unknown = set(raw) - {"kind", "params", "seed", "out", "jobs", "calibration"}
    _require(not unknown, sorted(unknown)[0] if unknown else "", "unknown top-level field")
    params = raw.get("params", {})
    _require(isinstance(params, dict), "params", "must be a mapping")
    extra = set(params) - set(DEFAULTS[k])
    _require(not extra, f"params.{sorted(extra)[0]}" if extra else "", f"not a parameter of {k}")
    merged = {**copy.deepcopy(DEFAULTS[k]), **params}
    _validate_params(k, merged)
    sd = raw.get("seed", 0) if seed is None else seed
    _require(isinstance(sd, int) and sd >= 0, "seed", "must be a nonnegative integer")
    jb = raw.get("jobs", 1) if jobs is None else jobs
    _require(isinstance(jb, int) and jb >= 1, "jobs", "must be a positive integer")
    return ExperimentConfig(k, merged, sd, out or raw.get("out", "out"), jb,
                            calibration if calibration is not None else raw.get("calibration"))


def load_config(path, **overrides):
    """Read a JSON config file and validate it."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON in {path}: {exc}") from exc
    return validate(raw, **overrides)
