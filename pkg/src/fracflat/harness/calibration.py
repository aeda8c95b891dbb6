"""Empirical constants for the estimates, fitted per metric family and versioned.

A calibration file holds the constants the estimates are stated with
(``C_effacement``, ``C_measure``, ``C_tail``, ``C_dirichlet``, the Gaussian
envelope) and the flatness-pipeline constants (``delta_harnack``, ``k0``,
``drift_factor``), plus the sweep tables they were fitted from.

Sweeps evaluate the family member admissible at scale ``r``, ``g(x / r)``;
the tail sweep keeps ``g`` fixed since only the excised radius varies.
``drift_factor`` bounds ``|nu_l - nu_{l+1}| 2^{l alpha_fit}`` relative to
the first-scale drift.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate

from .. import __version__
from ..errors import ConfigError, FitError, PreconditionError
from ..flatness import dyadic_flatness_report, harnack_dichotomy_check
from ..heat import SolvePlan, gaussian_bound_fit, solve_heat
from ..kernel import (cns, dirichlet_kernel_gap, kernel_constant, kernel_l1_difference, loglog_slope,
                      measure_difference_integral, sphere_area, tail_integral_constant)
from ..metric import metric_from_config
from ..solver import solve_minimal_graph, stability_cap
from .reports import dumps

DEFAULT_FAMILY = {
    "metric": {"family": "diagonal_sinusoidal", "dim": 1, "amplitude": 0.4, "scale": 1.0},
    "s": 0.5,
    "y": [0.3],
    "radii": [1.0, 0.5, 0.25, 0.125],
    "heat_times": [0.05, 0.1, 0.2, 0.4],
    "heat_h": 1 / 128,
    "heat_phases": [0.0, 1.0, 2.0],
    "margin": 1.25,
    "solver": {"runs": 3, "tol": 1e-3, "h": 1 / 32, "alpha_factor": 0.5, "k_max": 4, "r": 0.5,
               "samples": 4001},
}

KEYS = ("version", "n", "s", "family", "C_effacement", "C_tail", "C_dirichlet", "C_measure", "delta_harnack",
        "k0", "C_gauss", "c_gauss", "drift_factor", "flow_step_constant", "diagnostics")


def family_config(cfg=None):
    """Merge a (partial) family config over the default and check it."""
    merged = copy.deepcopy(DEFAULT_FAMILY)
    for k, v in (cfg or {}).items():
        if k not in merged:
            raise ConfigError(f"calibration.{k}: unknown field")
        merged[k] = {**merged[k], **v} if isinstance(merged[k], dict) and k == "solver" else v
    s = merged["s"]
    if not (isinstance(s, (int, float)) and 0 < s < 1):
        raise ConfigError(f"calibration.s: must lie in (0, 1), got {s!r}")
    if not isinstance(merged["metric"], dict) or "family" not in merged["metric"]:
        raise ConfigError("calibration.metric: must be a metric family mapping")
    if len(merged["radii"]) < 2:
        raise ConfigError("calibration.radii: need at least two radii")
    return merged


def _tail_numeric(metric, y, r, s):
    """``int_{|x-y|>r} K_{g(y)}(x, y) dx`` by radial quadrature of the frozen kernel."""
    g = metric.at(y)
    n = metric.dim
    if n == 1:
        f = lambda rho: float(kernel_constant(g, y + rho, y, s) + kernel_constant(g, y - rho, y, s))
        return integrate.quad(f, r, np.inf, epsrel=1e-12, limit=400)[0]
    if n == 2:
        def ring(rho):
            return integrate.quad(lambda th: rho * float(kernel_constant(
                g, y + rho * np.array([math.cos(th), math.sin(th)]), y, s)), 0, 2 * np.pi, epsrel=1e-12)[0]
        return integrate.quad(ring, r, np.inf, epsrel=1e-10, limit=400)[0]
    raise NotImplementedError("numeric tail integrals are implemented for n in {1, 2}")


def sweep_value(task):
    """One point of an estimate sweep: ``(estimate, metric_cfg, y, r, s) -> value`` (picklable)."""
    kind, metric_cfg, y, r, s = task
    metric = metric_from_config(metric_cfg)
    y = np.asarray(y, dtype=float)
    if kind == "tail":
        # the frozen kernel at y is fixed; only the excised radius moves
        return _tail_numeric(metric, y, r, s)
    metric = metric.rescaled(r)
    if kind == "effacement":
        kd = kernel_l1_difference(metric, y, r, s)
        return kd.value + kd.small_t_budget + kd.large_t_estimate
    if kind == "measure":
        return measure_difference_integral(metric, y, r, s)[0]
    if kind == "dirichlet":
        return dirichlet_kernel_gap(metric, y, r, r / 2, s)[0]
    raise ValueError(kind)


def parallel_map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(min(jobs, len(tasks))) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _fit_constant(kind, radii, values, s, margin):
    """``C`` with ``values <= C r^{-s}`` (times ``margin``); the sweep must grow as ``r`` shrinks."""
    table = [[float(r), float(v)] for r, v in zip(radii, values)]
    order = np.argsort(radii)[::-1]
    vs = np.asarray(values, dtype=float)[order]
    if np.all(vs == 0):
        return 0.0, float("nan"), table
    if not np.all(np.diff(vs) > 0):
        raise FitError(f"{kind} sweep is not monotone in r: {table}")
    slope = loglog_slope(radii, values)
    C = margin * float(np.max(np.asarray(values) * np.asarray(radii) ** s))
    return C, slope, table


def _solver_runs(sc, s, seed):
    """Seeded exterior data, converged solutions, flatness and dichotomy statistics."""
    rng = np.random.default_rng(seed)
    alpha = sc["alpha_factor"] * s
    deltas, kmax_ok, drift_consts, runs = [], [], [], []
    for i in range(sc["runs"]):
        fam = "sinusoidal" if i % 2 == 0 else "cosine"
        ext = {"family": fam, "amplitude": float(rng.uniform(0.02, 0.06)),
               "frequency": float(rng.uniform(1.0, 3.0)), "phase": float(rng.uniform(0, 2 * np.pi))}
        state, rep = solve_minimal_graph(ext, s, sc["tol"], h=sc["h"])
        f = state.function()
        xs = np.linspace(-1, 1, sc["samples"])
        pts = np.stack([xs, f(xs)], axis=1)
        base = pts[len(xs) // 2]
        fr = dyadic_flatness_report(pts, base, sc["k_max"], alpha, r=sc["r"])
        expo = fr.alpha_fit if math.isfinite(fr.alpha_fit) else alpha
        if fr.normals_drift and fr.normals_drift[0] > 0:
            d0 = fr.normals_drift[0]
            drift_consts += [d * 2.0 ** (l * expo) / d0 for l, d in zip(fr.scales, fr.normals_drift)]
        best_k = -1
        for k in range(len(fr.directions)):
            try:
                harnack_dichotomy_check(pts, 0.5, k, alpha, sc["r"], normals=fr.directions, base_point=base)
            except PreconditionError:
                break
            best_k = k
            grid = np.arange(0.05, 0.96, 0.05)
            ok = [d for d in grid if harnack_dichotomy_check(pts, d, k, alpha, sc["r"],
                                                             normals=fr.directions, base_point=base).branch
                  != "neither"]
            deltas.append(float(max(ok)) if ok else 0.0)
        kmax_ok.append(best_k)
        runs.append({"exterior": ext, "converged": rep.converged, "iterations": rep.iterations,
                     "residual": rep.residual, "alpha_fit": fr.alpha_fit, "widths": fr.widths})
    return {"delta_harnack": 0.5 * min(deltas) if deltas else 0.0, "k0": int(min(kmax_ok)),
            "drift_factor": 1.5 * max(drift_consts) if drift_consts else 1.0, "runs": runs, "alpha": alpha}


def calibrate(family=None, seed=0, jobs=1):
    """Fit every constant for ``family`` (see ``DEFAULT_FAMILY``); returns the calibration mapping."""
    fc = family_config(family)
    s = float(fc["s"])
    metric = metric_from_config(fc["metric"])
    n = metric.dim
    y = np.asarray(fc["y"], dtype=float).reshape(n)
    radii = [float(r) for r in fc["radii"]]
    margin = float(fc["margin"])
    diag = {}
    out = {"n": n, "s": s, "family": fc["metric"]["family"]}

    tasks = [(k, fc["metric"], y.tolist(), r, s) for k in ("effacement", "dirichlet") for r in radii]
    if n == 1:
        tasks += [("measure", fc["metric"], y.tolist(), r, s) for r in radii]
    values = parallel_map(sweep_value, tasks, jobs)
    by_kind = {}
    for (k, *_), v in zip(tasks, values):
        by_kind.setdefault(k, []).append(v)
    for k, key in (("effacement", "C_effacement"), ("dirichlet", "C_dirichlet"), ("measure", "C_measure")):
        if k in by_kind:
            C, slope, table = _fit_constant(k, radii, by_kind[k], s, margin)
            out[key] = C
            diag[k] = {"slope": slope, "table": table}
        else:
            out[key] = None
    g_low = metric.lower * np.eye(n)
    out["C_tail"] = float(tail_integral_constant(y, 1.0, s, g_low))
    diag["tail"] = {"euclidean_value": float(sphere_area(n) * cns(n, s) / s)}

    # Gaussian envelope over phase-shifted members of the family
    fields = []
    for ph in fc["heat_phases"]:
        mcfg = {**fc["metric"]}
        if mcfg["family"] == "diagonal_sinusoidal":
            mcfg["phase"] = ph
        m = metric_from_config(mcfg)
        for t in fc["heat_times"]:
            fields.append(solve_heat(m, SolvePlan(h=fc["heat_h"], tau=t / 64), t, y))
    # decay rate guaranteed by the ellipticity bound; C covers every sample
    fit = gaussian_bound_fit(fields)
    c_env = 0.9 * metric.lower / 4
    cover = gaussian_bound_fit(fields, envelope=(1.0, c_env))
    out["C_gauss"] = float(1.05 * cover.required_slack)
    out["c_gauss"] = float(c_env)
    diag["gauss"] = {"C_lstsq": fit.C, "c_lstsq": fit.c, "samples": fit.samples}

    sr = _solver_runs(fc["solver"], s, seed)
    out["delta_harnack"] = sr["delta_harnack"]
    out["k0"] = sr["k0"]
    out["drift_factor"] = sr["drift_factor"]
    out["flow_step_constant"] = float(stability_cap(s, 1.0))
    diag["solver"] = {"runs": sr["runs"], "alpha": sr["alpha"], "n": 2}
    diag["family_config"] = fc
    diag["seed"] = seed
    blob = json.dumps({"family": fc, "seed": seed}, sort_keys=True).encode()
    out["version"] = f"{__version__}+{hashlib.sha256(blob).hexdigest()[:12]}"
    out["diagnostics"] = diag
    return {k: out[k] for k in KEYS}


def write_calibration(cal, path, force=False):
    """Write ``cal`` as sorted-key JSON; refuses to overwrite unless ``force``."""
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass force=True (--force) to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(cal))
    return path


def load_calibration(path=None):
    """Read a calibration file (the packaged default when ``path`` is None)."""
    if path is None:
        text = resources.files("fracflat").joinpath("data/calibration_default.json").read_text()
    else:
        text = Path(path).read_text()
    cal = json.loads(text)
    missing = [k for k in KEYS if k not in cal]
    if missing:
        raise ConfigError(f"calibration: missing field {missing[0]}")
    return cal
