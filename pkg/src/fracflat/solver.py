"""s-minimal graphs by a damped explicit nonlocal curvature flow."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import ConfigError, ConvergenceError, GeometryError
from .kernel import cns
from .metric import as_spd
from .nmc import graph_nmc
from .region import Subgraph

FAMILIES = ("zero", "linear", "sinusoidal", "cosine")


@dataclass(frozen=True)
class ExteriorData:
    """Closed-form graph ``f0`` prescribed outside the unit interval.

    ``sup_abs`` bounds ``|f0 - (slope x + intercept)|``, the deviation from
    the linear part, which is what controls the far columns.
    """

    family: str
    params: dict
    slope: float = 0.0
    intercept: float = 0.0
    sup_abs: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        base = self.slope * x + self.intercept
        if self.family == "sinusoidal":
            return base + p["amplitude"] * np.sin(p["frequency"] * x + p.get("phase", 0.0))
        if self.family == "cosine":
            return base + p["amplitude"] * np.cos(p["frequency"] * x + p.get("phase", 0.0))
        return base + 0.0 * x

    def paired_tail(self, a, T, s):
        """``int_T^inf t^{-2-s} (f0(a+t) + f0(a-t)) dt`` for ``T > 1 + |a|``."""
        a = np.asarray(a, dtype=float)
        out = 2 * (self.slope * a + self.intercept) * T ** (-1 - s) / (1 + s)
        if self.family in ("sinusoidal", "cosine"):
            k, amp, ph = self.params["frequency"], self.params["amplitude"], self.params.get("phase", 0.0)
            osc = integrate.quad(lambda t: t ** (-2 - s), T, np.inf, weight="cos", wvar=k)[0] if k else \
                T ** (-1 - s) / (1 + s)
            trig = np.sin if self.family == "sinusoidal" else np.cos
            out = out + 2 * amp * trig(k * a + ph) * osc
        return out


def exterior_from_config(cfg):
    """Build :class:`ExteriorData` from ``{"family": ..., <params>}``.

    Families: ``zero``; ``linear`` (``slope``, ``intercept``);
    ``sinusoidal`` / ``cosine`` (``amplitude``, ``frequency``, optional
    ``phase``).
    """
    cfg = dict(cfg)
    fam = cfg.pop("family", None)
    if fam not in FAMILIES:
        raise ConfigError(f"exterior.family: must be one of {FAMILIES}, got {fam!r}")
    if fam == "zero":
        return ExteriorData("zero", {})
    if fam == "linear":
        return ExteriorData("linear", {}, float(cfg.get("slope", 0.0)), float(cfg.get("intercept", 0.0)))
    for key in ("amplitude", "frequency"):
        if key not in cfg:
            raise ConfigError(f"exterior.{key}: required for the {fam} family")
    params = {k: float(cfg[k]) for k in ("amplitude", "frequency", "phase") if k in cfg}
    return ExteriorData(fam, params, sup_abs=abs(params["amplitude"]))


@dataclass(frozen=True)
class GraphState:
    """Snapshot of the flow: node values on ``[-L, L]`` and the curvature at interior nodes.

    Nodes with ``|x| >= 1`` carry the exterior data; between them the
    graph is a cubic spline and beyond ``L`` it is the exterior data itself.
    """

    x: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    exterior: ExteriorData
    s: float
    g: np.ndarray | None = field(default=None, repr=False)
    H: np.ndarray | None = field(default=None, repr=False)
    residual: float = math.inf
    iteration: int = 0

    @property
    def interior(self):
        return np.abs(self.x) < 1 - 1e-12

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    def function(self):
        spl = CubicSpline(self.x, self.f)
        ext = self.exterior

        def f(xp):
            xp = np.asarray(xp, dtype=float)
            return np.where(np.abs(xp) < 1.0, spl(np.clip(xp, -1.0, 1.0)), ext(xp))
        return f

    def sup_deviation(self):
        ext = self.exterior
        dev = np.abs(self.f - ext.slope * self.x - ext.intercept).max()
        return float(max(ext.sup_abs, dev))

    def region(self):
        return Subgraph(self.function(), dim=2, sup_abs=self.sup_deviation() + abs(self.exterior.intercept),
                        nodes=tuple(self.x), far_tail=self.exterior.paired_tail)

    def boundary_points(self, radius=1.0, center=0.0):
        keep = np.abs(self.x - center) <= radius
        return np.stack([self.x[keep], self.f[keep]], axis=1)


def initial_state(exterior, s, h=1 / 32, L=1.25, g=None, initial=None):
    """State whose interior values are ``initial(x)`` (default: the exterior data itself)."""
    m = int(round(L / h))
    x = h * np.arange(-m, m + 1)
    f = np.asarray(exterior(x), dtype=float).copy()
    if initial is not None:
        inner = np.abs(x) < 1 - 1e-12
        f[inner] = np.asarray(initial(x[inner]), dtype=float)
    st = GraphState(x, f, exterior, s, None if g is None else as_spd(g))
    return _with_curvature(st)


def nmc_graph_operator(state: GraphState, xp=None, tol=1e-12):
    """NMC of ``{x2 < f}`` at ``(x', f(x'))`` (all interior nodes when ``xp`` is None)."""
    pts = state.x[state.interior] if xp is None else np.atleast_1d(np.asarray(xp, dtype=float))
    if np.any(np.abs(pts) >= 1):
        raise GeometryError("the graph operator is evaluated at interior points |x'| < 1 only")
    val = graph_nmc(state.function(), pts, state.s, state.g, sup_abs=state.sup_deviation(), tol=tol,
                    far_tail=state.exterior.paired_tail, knots=state.x)
    if not np.all(np.isfinite(val)):
        raise ConvergenceError("non-finite curvature in the graph operator", trace=pts.tolist())
    return val


def _with_curvature(state):
    H = nmc_graph_operator(state)
    return replace(state, H=H, residual=float(np.abs(H).max()) if len(H) else 0.0)


def stability_cap(s, h, safety=0.9):
    """Explicit-step cap ``c h^{1+s}`` from the largest eigenvalue of the linearized operator.

    The linearization is ``2 C kappa |xi|^{1+s}`` with
    ``kappa = -2 Gamma(-1-s) cos(pi (1+s)/2)``; the grid resolves
    ``|xi| <= pi / h``.
    """
    kappa = -2 * math.gamma(-1 - s) * math.cos(math.pi * (1 + s) / 2)
    lam = 2 * cns(2, s) * kappa * (math.pi / h) ** (1 + s)
    return safety * 2 / lam


def flow_step(state: GraphState, tau, backtrack=1.0, min_tau=1e-14):
    """One accepted step ``f <- f + tau H`` at interior nodes.

    The curvature is negative where the subgraph bulges upward, so this
    lowers bumps.  A step that raises the residual above
    ``backtrack * residual`` is retried with ``tau / 2``.  Returns
    ``(new_state, tau_used)``.
    """
    trace = []
    while tau >= min_tau:
        f = state.f.copy()
        f[state.interior] += tau * state.H
        new = _with_curvature(replace(state, f=f, iteration=state.iteration + 1))
        trace.append((tau, new.residual))
        if new.residual <= backtrack * state.residual or state.residual == 0:
            return new, tau
        tau /= 2
    raise ConvergenceError("step size underflow in the curvature flow", trace=trace)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual: float
    history: list
    tau: float
    seconds: float
    settings: dict
    stalled: dict | None = None

    def to_dict(self):
        return {"converged": self.converged, "iterations": self.iterations, "residual": self.residual,
                "tau": self.tau, "seconds": self.seconds, "settings": self.settings,
                "history": self.history, "stalled": self.stalled}


def solve_minimal_graph(exterior, s, tol=1e-3, max_iters=5000, h=1 / 32, L=1.25, g=None, initial=None,
                        safety=0.9, log_every=1, callback=None):
    """Run the flow until ``sup |H| <= tol`` at interior nodes.

    Returns ``(state, report)``; without convergence the last state is
    returned with ``report.converged = False``.  A step-size underflow
    ends the run early and is recorded in ``report.stalled`` with the last
    backtracking trace.
    """
    if not 0 < s < 1:
        raise ConfigError(f"s: must lie in (0, 1), got {s}")
    if isinstance(exterior, dict):
        exterior = exterior_from_config(exterior)
    t0 = time.perf_counter()
    state = initial_state(exterior, s, h, L, g, initial)
    cap = stability_cap(s, h, safety)
    if g is not None:
        gg = as_spd(g)
        cap *= math.sqrt(gg[1, 1]) * min(1.0, np.linalg.eigvalsh(gg)[0]) ** ((1 + s) / 2)
    tau = cap
    history = [(0, state.residual, 0.0)]
    stalled = None
    while state.residual > tol and state.iteration < max_iters:
        try:
            state, used = flow_step(state, min(cap, 2 * tau))
        except ConvergenceError as exc:
            stalled = {"message": str(exc), "trace": [list(map(float, r)) for r in exc.trace[-5:]]}
            break
        tau = used
        if state.iteration % log_every == 0:
            history.append((state.iteration, state.residual, used))
        if callback is not None:
            callback(state)
    if history[-1][0] != state.iteration:
        history.append((state.iteration, state.residual, tau))
    settings = {"h": h, "L": L, "tol": tol, "max_iters": max_iters, "step_cap": cap, "safety": safety,
                "exterior": {"family": exterior.family, **exterior.params, "slope": exterior.slope,
                             "intercept": exterior.intercept}, "s": s}
    rep = SolveReport(bool(state.residual <= tol), state.iteration, state.residual,
                      [list(map(float, r)) for r in history], tau, time.perf_counter() - t0, settings, stalled)
    return state, rep


def write_solution(state: GraphState, report: SolveReport, csv_path, log_path):
    """Grid function CSV (``x, f, H``) plus the convergence log as JSON."""
    H = np.full(len(state.x), np.nan)
    H[state.interior] = state.H
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "f", "H"])
        for row in zip(state.x, state.f, H):
            w.writerow([repr(float(v)) for v in row])
    with open(log_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
