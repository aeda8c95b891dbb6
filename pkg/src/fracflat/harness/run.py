"""Experiment pipelines: one function per experiment kind, all reporting through ``run``."""

from __future__ import annotations

import math
import time
import warnings
from pathlib import Path

import numpy as np
from scipy import integrate

from ..errors import PreconditionError
from ..flatness import dyadic_flatness_report, harnack_dichotomy_check
from ..heat import SolvePlan, heat_constant, solve_heat
from ..kernel import KernelModel, kernel_constant, loglog_slope, tail_integral_constant
from ..metric import metric_from_config
from ..nmc import fractional_perimeter, nmc_pv, viscosity_bound_check, write_nmc_csv
from ..region import Ball, region_from_config
from ..solver import solve_minimal_graph, write_solution
from .calibration import load_calibration, parallel_map, sweep_value
from .config import ExperimentConfig
from .reports import summary, write_csv, write_json

SWEEP_CONSTANT = {"effacement": "C_effacement", "measure": "C_measure", "dirichlet": "C_dirichlet",
                  "tail": "C_tail"}


def _random_spd(rng, n):
    a = rng.normal(size=(n, n))
    w = rng.uniform(0.6, 1.6, size=n)
    q, _ = np.linalg.qr(a)
    return q @ np.diag(w) @ q.T


def kernel_quadrature(g, x, y, s):
    """``int_0^inf t^{-1-s/2} H_g(t, x, y) dt`` by adaptive quadrature (split at the Gaussian scale)."""
    g = np.atleast_2d(g)
    d = np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))
    q = float(d @ g @ d)
    f = lambda t: t ** (-1 - s / 2) * float(heat_constant(g, t, x, y))
    opts = {"epsabs": 0.0, "epsrel": 1e-12, "limit": 400}
    return sum(integrate.quad(f, a, b, **opts)[0] for a, b in ((0, q / 8), (q / 8, 4 * q), (4 * q, np.inf)))


def _kernel_check(cfg, cal, out):
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    rows, worst = [], 0.0
    for n in p["dims"]:
        for s in p["orders"]:
            for _ in range(p["pairs"]):
                g = _random_spd(rng, n)
                x, y = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
                closed = float(kernel_constant(g, x, y, s))
                quad = kernel_quadrature(g, x, y, s)
                rel = abs(closed - quad) / abs(quad)
                worst = max(worst, rel)
                rows.append([n, s, closed, quad, rel])
    write_csv(out / "kernel_check.csv", ["n", "s", "closed_form", "quadrature", "rel_error"], rows)
    return {"max_rel_error": worst, "pairs": len(rows), "tol": p["tol"]}, worst <= p["tol"]


def _estimate_sweep(cfg, cal, out):
    p = cfg.params
    s = p["s"]
    radii = [float(r) for r in p["radii"]]
    tasks = [(p["estimate"], p["metric"], p["y"], r, s) for r in radii]
    values = parallel_map(sweep_value, tasks, cfg.jobs)
    res = {"estimate": p["estimate"], "radii": radii, "values": values}
    if p["estimate"] == "tail":
        metric = metric_from_config(p["metric"])
        closed = [float(tail_integral_constant(p["y"], r, s, metric.at(p["y"]))) for r in radii]
        rel = [abs(v - c) / c for v, c in zip(values, closed)]
        slope = loglog_slope(radii, values)
        res.update(closed_form=closed, max_rel_error=max(rel), slope=slope)
        ok = max(rel) <= 1e-4 and abs(slope + s) <= 0.02
        rows = [[r, v, c, e <= 1e-4] for r, v, c, e in zip(radii, values, closed, rel)]
    elif all(v == 0 for v in values):
        res.update(slope=None, bounds=[0.0] * len(radii))
        ok = True
        rows = [[r, 0.0, 0.0, True] for r in radii]
    else:
        C = cal.get(SWEEP_CONSTANT[p["estimate"]])
        bounds = [C * r ** (-s) for r in radii] if C is not None else [math.inf] * len(radii)
        slope = loglog_slope(radii, values)
        dominated = [v <= b for v, b in zip(values, bounds)]
        res.update(slope=slope, bounds=bounds, constant=C, dominated=dominated)
        ok = abs(slope + s) <= p["slope_tol"] and all(dominated)
        rows = [[r, v, b, d] for r, v, b, d in zip(radii, values, bounds, dominated)]
    write_csv(out / "estimate_sweep.csv", ["r", "value", "bound", "pass"], rows)
    return res, ok


def _model(metric_cfg, n, s):
    if metric_cfg is None:
        return KernelModel.constant(np.eye(n), s)
    m = metric_from_config(metric_cfg)
    if m.is_constant:
        return KernelModel.constant(m.at(np.zeros(n)), s)
    return KernelModel.numeric(m, s)


def _nmc_eval(cfg, cal, out):
    p = cfg.params
    region = region_from_config(p["region"])
    model = _model(p["metric"], region.dim, p["s"])
    results = [nmc_pv(region, np.asarray(y, float), model, pv_tol=p["pv_tol"], route=p["route"])
               for y in p["points"]]
    pts = [list(map(float, y)) for y in p["points"]]
    write_nmc_csv(out / "nmc.csv", list(zip(pts, results)))
    res = {"points": pts, "values": [r.value for r in results], "converged": [r.converged for r in results],
           "details": [r.to_dict(y) for y, r in zip(pts, results)]}
    return res, all(r.converged for r in results)


def _perimeter(cfg, cal, out):
    p = cfg.params
    region = region_from_config(p["region"])
    omega = Ball(tuple(p["omega"]["center"]), float(p["omega"]["radius"]))
    model = KernelModel.constant(np.eye(region.dim), p["s"])
    value, trace = fractional_perimeter(region, omega, model, return_trace=True)
    write_csv(out / "perimeter_trace.csv", ["eps", "value", "quad_error"], trace)
    return {"value": value, "trace": trace}, math.isfinite(value)


def _heat_solve(cfg, cal, out):
    p = cfg.params
    metric = metric_from_config(p["metric"])
    plan = SolvePlan(h=p["h"], tau=p["tau"], theta=p["theta"])
    field = solve_heat(metric, plan, p["t"], np.asarray(p["source"], float))
    field.export(out / "heat.csv", out / "heat_field.json")
    top = max([m for _, m in field.mass_history] + [field.mass])
    return {"mass": field.mass, "max_mass": top, "symmetry_residual": field.symmetry_residual}, top <= 1 + 1e-10


def _graph_points(state_or_fn, samples):
    xs = np.linspace(-1, 1, samples)
    f = state_or_fn.function() if hasattr(state_or_fn, "function") else state_or_fn
    return np.stack([xs, f(xs)], axis=1)


def _flatness_and_dichotomy(pts, base, k_max, alpha, r, delta, k0, drift_factor):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fr = dyadic_flatness_report(pts, base, k_max, alpha, r=r, drift_factor=drift_factor)
    outcomes = []
    if delta is not None:
        for k in range(min(k0, len(fr.directions) - 1) + 1):
            try:
                oc = harnack_dichotomy_check(pts, delta, k, alpha, r, normals=fr.directions, base_point=base)
            except PreconditionError as exc:
                outcomes.append({"k": k, "branch": "precondition_failed", "reason": str(exc)})
                break
            outcomes.append({"k": k, **oc.to_dict()})
    return fr, outcomes, [str(w.message) for w in caught]


def _flatness_pipeline(cfg, cal, out):
    p = cfg.params
    gcfg = dict(p["graph"])
    fam = gcfg.pop("family")
    if fam == "power":
        e = float(gcfg.get("exponent", 1.5))
        f = lambda x: np.abs(x) ** e
    elif fam == "sine":
        f = lambda x: gcfg.get("amplitude", 0.1) * np.sin(gcfg.get("frequency", 5.0) * x)
    elif fam == "plane":
        f = lambda x: gcfg.get("slope", 0.0) * x
    elif fam == "solver":
        state, _ = solve_minimal_graph(gcfg["exterior"], gcfg.get("s", 0.5), gcfg.get("tol", 1e-3))
        f = state.function()
    else:
        raise ValueError(f"unknown graph family {fam!r}")
    pts = _graph_points(f, p["samples"])
    base = np.array([0.0, float(f(np.array([0.0]))[0])])
    delta = p["delta"] if p["delta"] is not None else cal["delta_harnack"]
    fr, outcomes, warns = _flatness_and_dichotomy(pts, base, p["k_max"], p["alpha"], p["r"], delta,
                                                  min(cal["k0"], p["k_max"]), cal["drift_factor"])
    fr.write(out / "flatness.json", out / "flatness.csv")
    ok = (fr.alpha_fit >= p["alpha"]) and fr.drift_ok and all(o["branch"] != "neither" for o in outcomes)
    return {"flatness": fr.to_dict(), "dichotomy": outcomes, "warnings": warns, "delta": delta}, ok


def _solve(cfg, cal, out):
    p = cfg.params
    state, rep = solve_minimal_graph(p["exterior"], p["s"], p["tol"], p["max_iters"], p["h"])
    write_solution(state, rep, out / "solution.csv", out / "solve_log.json")
    d = rep.to_dict()
    d.pop("seconds")
    return {"solve": d}, rep.converged


def _solve_and_verify(cfg, cal, out):
    p = cfg.params
    s = p["s"]
    state, rep = solve_minimal_graph(p["exterior"], s, p["tol"], p["max_iters"], p["h"])
    write_solution(state, rep, out / "solution.csv", out / "solve_log.json")
    region = state.region()
    r = p["r"]
    f0 = float(state.function()(np.array([0.0]))[0])
    model = KernelModel.constant(np.eye(2), s)
    C0 = p["C0_factor"] * r ** s
    vis = viscosity_bound_check(region, Ball((0.0, f0), 0.9), C0, r, model, route="graph")
    alpha = p["alpha"] if p["alpha"] is not None else 0.5 * s
    pts = _graph_points(state, 4001)
    fr, outcomes, warns = _flatness_and_dichotomy(pts, np.array([0.0, f0]), p["k_max"], alpha, 0.5,
                                                  cal["delta_harnack"], min(cal["k0"], p["k_max"]),
                                                  cal["drift_factor"])
    fr.write(out / "flatness.json", out / "flatness.csv")
    d = rep.to_dict()
    d.pop("seconds")
    checks = {"converged": rep.converged, "viscosity": vis.passed, "alpha_fit": fr.alpha_fit >= alpha,
              "drift": fr.drift_ok, "dichotomy": all(o["branch"] != "neither" for o in outcomes)}
    res = {"solve": d, "viscosity": vis.to_dict(), "flatness": fr.to_dict(), "dichotomy": outcomes,
           "warnings": warns, "checks": checks, "alpha": alpha}
    return res, all(checks.values())


PIPELINES = {"kernel_check": _kernel_check, "estimate_sweep": _estimate_sweep, "nmc_eval": _nmc_eval,
             "perimeter": _perimeter, "heat_solve": _heat_solve, "flatness_pipeline": _flatness_pipeline,
             "solve": _solve, "solve_and_verify": _solve_and_verify}


def run(config: ExperimentConfig):
    """Run one experiment; returns ``(exit_code, summary_path)``.

    Writes ``<out>/<kind>.json`` (sorted keys, embeds the resolved config,
    its hash, the calibration version and module versions) and the CSV
    detail files of the pipeline.  Wall-clock time goes to a separate
    ``<kind>.timing.json`` so that summaries are reproducible byte for byte.
    """
    cal = load_calibration(config.calibration)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    results, ok = PIPELINES[config.kind](config, cal, out)
    path = write_json(out / f"{config.kind}.json", summary(config, cal["version"], results, ok))
    write_json(out / f"{config.kind}.timing.json", {"seconds": time.perf_counter() - t0})
    return (0 if ok else 1), path
