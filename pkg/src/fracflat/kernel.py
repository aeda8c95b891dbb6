"""Fractional kernels obtained by subordinating heat kernels in time.

``K(x, y) = int_0^inf t^{-1-s/2} H(t, x, y) dt``, without the normalizing
factor ``1/|Gamma(-s/2)|``.  For a constant metric this integrates to
``C_{n,s} |x - y|_g^{-(n+s)}`` with ``C_{n,s} = 2^s pi^{-n/2} Gamma((n+s)/2)``.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import GeometryError, ResolutionError
from .heat import Grid, HeatSolver, SolvePlan, default_box, diffusion_length, time_schedule
from .metric import FractionalOrder, MetricField, as_spd, constant_metric, metric_norm, require_admissible


def _order(s):
    return s.s if isinstance(s, FractionalOrder) else float(s)


@dataclass(frozen=True)
class Cns:
    """The constant in ``K_g(x, y) = C_{n,s} |x - y|_g^{-(n+s)}``."""

    n: int
    s: float

    @property
    def value(self):
        return cns(self.n, self.s)


def cns(n, s):
    s = _order(s)
    return 2.0 ** s * math.pi ** (-n / 2) * math.gamma((n + s) / 2)


def sphere_area(n):
    """Area of the unit sphere ``S^{n-1}`` in ``R^n``."""
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def kernel_constant(g_const, x, y, s):
    """``C_{n,s} |x - y|_g^{-(n+s)}``; rejects coincident points."""
    s = _order(s)
    g = as_spd(g_const)
    n = g.shape[0]
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if n == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    d = metric_norm(g, z)
    if np.any(d == 0):
        raise GeometryError("kernel is singular at x = y")
    return cns(n, s) * d ** (-(n + s))


def gaussian_time_integral(q, n, s, t_lo=0.0, t_hi=np.inf, C=None, c=0.25):
    """``int_{t_lo}^{t_hi} t^{-1-s/2} C t^{-n/2} exp(-c q / t) dt`` in closed form.

    With the default ``C = (4 pi)^{-n/2}`` and ``c = 1/4`` this is the time
    integral of the constant-metric heat kernel at squared distance ``q``.
    """
    a = (n + s) / 2
    C = (4 * math.pi) ** (-n / 2) if C is None else C
    q = np.asarray(q, dtype=float)
    lam = c * q
    # substitute u = lam / t
    u_hi = np.where(t_lo > 0, lam / max(t_lo, 1e-300), np.inf)
    u_lo = lam / t_hi if np.isfinite(t_hi) else 0.0 * lam
    full = special.gamma(a) * lam ** (-a)
    frac = special.gammainc(a, u_hi) - special.gammainc(a, u_lo)
    return C * full * frac


def tail_integral_constant(y, r, s, g_const):
    """``int_{|x - y| > r} K_g(x, y) dx`` (Lebesgue measure, Euclidean ball).

    Equals ``omega_{n-1} C_{n,s} r^{-s} / s`` for the identity; other
    constant metrics weight each direction by ``|theta|_g^{-(n+s)}``.
    """
    s = _order(s)
    if r <= 0:
        raise ValueError("r must be positive")
    g = as_spd(g_const)
    n = g.shape[0]
    radial = cns(n, s) * r ** (-s) / s
    return radial * angular_weight(g, s)


def angular_weight(g, s):
    """``int_{S^{n-1}} |theta|_g^{-(n+s)} d theta``."""
    g = as_spd(g)
    n = g.shape[0]
    p = n + s
    if np.allclose(g, g[0, 0] * np.eye(n)):
        return sphere_area(n) * g[0, 0] ** (-p / 2)
    if n == 1:
        return 2 * g[0, 0] ** (-p / 2)
    if n == 2:
        f = lambda th: (g[0, 0] * np.cos(th) ** 2 + 2 * g[0, 1] * np.cos(th) * np.sin(th)
                        + g[1, 1] * np.sin(th) ** 2) ** (-p / 2)
        return integrate.quad(f, 0, 2 * np.pi, epsabs=0, epsrel=1e-12, limit=200)[0]
    if n == 3:
        def f(ph, th):
            v = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
            return (v @ g @ v) ** (-p / 2) * np.sin(th)
        return integrate.dblquad(f, 0, np.pi, 0, 2 * np.pi, epsabs=0, epsrel=1e-10)[0]
    raise NotImplementedError("anisotropic tail integrals are implemented for n <= 3")


# ---------------------------------------------------------------------------
# numeric kernels


def _accumulate(solver: HeatSolver, u, s, t_lo, t_hi, plan: SolvePlan, start=0.0, extra=None):
    """Propagate ``u`` from ``start`` and return ``(int_{t_lo}^{t_hi} t^{-1-s/2} u dt, u(t_hi))``.

    Trapezoid rule on the step times of a geometric schedule that hits
    ``t_lo`` exactly.  ``extra`` are further solvers advanced in lockstep
    (same schedule) with their own states; their integrals are returned too.
    """
    solvers = [solver] + [e[0] for e in (extra or [])]
    states = [u] + [e[1] for e in (extra or [])]
    if t_lo > start:
        blocks = time_schedule(t_lo, plan, start)
        states = [sv.propagate(st, blocks) for sv, st in zip(solvers, states)]
    acc = [np.zeros_like(st) for st in states]
    prev_t = t_lo
    prev_f = [t_lo ** (-1 - s / 2) * st for st in states]
    geo = SolvePlan(plan.h, max(plan.tau, t_lo / 16), plan.theta, plan.padding,
                    plan.stage_steps or 32, 0)
    for tau, theta, nsteps in time_schedule(t_hi, geo, t_lo):
        for _ in range(nsteps):
            states = [sv.propagate(st, [(tau, theta, 1)]) for sv, st in zip(solvers, states)]
            t = prev_t + tau
            fs = [t ** (-1 - s / 2) * st for st in states]
            for k in range(len(acc)):
                acc[k] += 0.5 * tau * (fs[k] + prev_f[k])
            prev_t, prev_f = t, fs
    return acc, states


@dataclass
class KernelEstimate:
    value: float
    small_t_part: float
    numeric_part: float
    large_t_part: float
    error_budget: dict
    t0: float
    t_max: float


class KernelModel:
    """A fractional kernel: closed form for constant metrics or numeric subordination.

    Numeric models cache subordinated heat fields per source point; reads are
    concurrent, writes go through a lock.
    """

    def __init__(self, variant, s, g_const=None, metric=None, plan=None, t_max=None, tol=1e-2,
                 gauss=None):
        if variant not in ("constant_metric", "numeric"):
            raise ValueError(f"unknown kernel variant {variant!r}")
        self.variant = variant
        self.s = _order(s)
        self.g_const = None if g_const is None else as_spd(g_const)
        self.metric = metric
        self.plan = plan or SolvePlan(h=1 / 64, tau=1 / 4096, stage_steps=32)
        self.t_max = t_max
        self.tol = tol
        # Gaussian envelope (C, c) used for certified small/large time budgets
        self.gauss = gauss
        self._cache = {}
        self._lock = threading.Lock()

    @classmethod
    def constant(cls, g_const, s):
        return cls("constant_metric", s, g_const=g_const)

    @classmethod
    def numeric(cls, metric: MetricField, s, plan=None, t_max=None, tol=1e-2, gauss=None):
        return cls("numeric", s, metric=metric, plan=plan, t_max=t_max, tol=tol, gauss=gauss)

    @property
    def dim(self):
        return self.g_const.shape[0] if self.variant == "constant_metric" else self.metric.dim

    def frozen(self, y):
        """Constant metric used to freeze the kernel at ``y``."""
        if self.variant == "constant_metric":
            return self.g_const
        return self.metric.at(y)

    def __call__(self, x, y):
        if self.variant == "constant_metric":
            return kernel_constant(self.g_const, x, y, self.s)
        return kernel_numeric(self, x, y).value

    def envelope(self):
        if self.gauss is not None:
            return self.gauss
        m = self.metric
        n = m.dim
        # uncalibrated default: Gaussian of the smallest eigenvalue with margins
        return 2.0 * (4 * math.pi * m.lower) ** (-n / 2), 0.9 * m.lower / 4

    def _field(self, y, t0, t_max, plan):
        key = (tuple(np.round(y, 12)), t0, t_max, plan)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        lo, hi = default_box(self.metric, t_max, [y], plan.padding)
        grid = Grid(lo, hi, plan.h)
        solver = HeatSolver(self.metric, grid)
        u0, _ = solver.delta(y)
        (acc,), _ = _accumulate(solver, u0, self.s, t0, t_max, plan)
        out = (grid, solver.full(acc))
        with self._lock:
            self._cache.setdefault(key, out)
        return out


def _t_max_for(model: KernelModel, q_lo):
    if model.t_max is not None:
        return model.t_max
    n, s = model.dim, model.s
    C, _ = model.envelope()
    # Gaussian large-time budget  C T^{-(n+s)/2} 2/(n+s)  below tol * frozen value scale
    target = model.tol * cns(n, s) * max(q_lo, 1e-12) ** (-(n + s) / 2)
    return float((target * (n + s) / (2 * C)) ** (-2 / (n + s)))


def kernel_numeric(model: KernelModel, x, y, refine_check=True):
    """Subordinated kernel ``K(x, y)`` from numeric heat solves with an itemized error budget.

    The time axis is split at ``t0 = min((r/4)^2, (|x-y|/8)^2)``: below
    ``t0`` the frozen Gaussian of ``g(y)`` is integrated in closed form, on
    ``[t0, T_max]`` the numeric heat kernel is integrated, beyond ``T_max``
    the frozen Gaussian again.  The budget bounds each replacement by the
    Gaussian envelope of the model, and the discretization error by the
    difference to a solve with doubled step.
    """
    if model.variant != "numeric":
        v = float(kernel_constant(model.g_const, x, y, model.s))
        return KernelEstimate(v, 0.0, v, 0.0, {"small_t": 0.0, "large_t": 0.0, "discretization": 0.0,
                                                "total": 0.0}, 0.0, np.inf)
    n, s = model.dim, model.s
    x = np.asarray(x, dtype=float).reshape(n)
    y = np.asarray(y, dtype=float).reshape(n)
    d = float(np.linalg.norm(x - y))
    if d == 0:
        raise GeometryError("kernel is singular at x = y")
    G = model.metric.at(y)
    q = float((x - y) @ G @ (x - y))
    r_loc = 1.0 / model.metric.grad_bound if model.metric.grad_bound > 0 else np.inf
    t0 = min((r_loc / 4) ** 2, (d / 8) ** 2)
    plan = model.plan
    if plan.h > math.sqrt(t0) / 4:
        raise ResolutionError(f"h={plan.h} does not resolve t0={t0:.3g}; need h <= {math.sqrt(t0) / 4:.3g}",
                              suggested_step=min(plan.tau, t0 / 16))
    t_max = _t_max_for(model, q)
    margin = 0.5 * plan.padding * diffusion_length(model.metric, t_max)
    if np.any(np.abs(x - y) > margin):
        raise GeometryError(f"target point {x.tolist()} violates the box padding around {y.tolist()}")
    det = math.sqrt(np.linalg.det(G))
    # frozen Gaussian is a density against sqrt|g(y)| dx; the numeric kernel against dV_g
    small = float(gaussian_time_integral(q, n, s, 0.0, t0)) / det
    large = float(gaussian_time_integral(q, n, s, t_max, np.inf)) / det
    grid, acc = model._field(y, t0, t_max, plan)
    mid = grid.interpolate(acc, x)
    C, c = model.envelope()
    budget = {
        "small_t": float(gaussian_time_integral(d * d, n, s, 0.0, t0, C=C, c=c)),
        "large_t": float(C * t_max ** (-(n + s) / 2) * 2 / (n + s)),
        "large_t_mass_bound": 2 / s * t_max ** (-s / 2),
    }
    if refine_check:
        coarse = SolvePlan(plan.h * 2, plan.tau * 2, plan.theta, plan.padding, plan.stage_steps,
                           plan.rannacher_steps)
        g2, acc2 = model._field(y, t0, t_max, coarse)
        budget["discretization"] = abs(mid - g2.interpolate(acc2, x))
    else:
        budget["discretization"] = float("nan")
    budget["total"] = budget["small_t"] + budget["large_t"] + (budget["discretization"] if refine_check else 0.0)
    return KernelEstimate(small + mid + large, small, mid, large, budget, t0, t_max)


# ---------------------------------------------------------------------------
# kernel estimates


@dataclass
class KernelDifference:
    """``int |K - K_y| dx`` split into the computed part and certified budgets."""

    value: float
    small_t_budget: float
    large_t_budget: float
    large_t_estimate: float
    r: float
    grid: Grid = field(repr=False)
    difference: np.ndarray = field(repr=False)
    settings: dict = field(default_factory=dict)

    @property
    def estimate(self):
        return self.value + self.large_t_estimate


DEFAULT_SWEEP = {"h": 1 / 128, "tau": 1 / 2 ** 16, "stage_steps": 32, "horizon": 400.0, "padding": 4.0,
                 "duhamel_constant": 0.25}


def kernel_l1_difference(metric: MetricField, y, r, s, settings=None, check=True):
    """``int |K(x, y) - K_y(x, y)| dx`` with ``K_y`` the kernel of the frozen metric ``g(y)``.

    Both kernels come from numeric heat solves on one grid with one time
    schedule, started from the same discrete delta, so that discretization
    errors cancel in the difference.  Lengths in ``settings`` are in units
    of ``r`` (times in units of ``r^2``): step ``h``, initial time step,
    stage length of the geometric schedule, ``horizon`` ``T/r^2``.

    The integral over ``t < t_lo = (4h)^2`` is budgeted by the Duhamel bound
    ``||H - H_y||_1 <= duhamel_constant sqrt(t)/r``; beyond the horizon the
    mass bound ``||H - H_y||_1 <= 2`` gives the certified budget, and the
    observed ``||H - H_y||_1`` at the horizon gives ``large_t_estimate``.
    """
    st = {**DEFAULT_SWEEP, **(settings or {})}
    s = _order(s)
    if check:
        require_admissible(metric, r, center=np.asarray(y, dtype=float).reshape(metric.dim),
                           radius=max(r, 1.0))
    n = metric.dim
    y = np.asarray(y, dtype=float).reshape(n)
    h = st["h"] * r
    t_lo = (4 * h) ** 2
    T = st["horizon"] * r * r
    frozen = constant_metric(metric.at(y))
    plan = SolvePlan(h=h, tau=st["tau"] * r * r, padding=st["padding"], stage_steps=st["stage_steps"])
    lo, hi = default_box(metric, T, [y], st["padding"])
    grid = Grid(lo, hi, h)
    if metric.is_constant:
        return KernelDifference(0.0, 0.0, 0.0, 0.0, r, grid, np.zeros(grid.size), st)
    sv_g = HeatSolver(metric, grid)
    sv_y = HeatSolver(frozen, grid)
    u_g, _ = sv_g.delta(y)
    u_y, _ = sv_y.delta(y)
    (acc_g, acc_y), (fin_g, fin_y) = _accumulate(sv_g, u_g, s, t_lo, T, plan, extra=[(sv_y, u_y)])
    diff = sv_g.full(acc_g - acc_y)
    cell = h ** n
    value = float(np.sum(np.abs(diff)) * cell)
    l1_T = float(np.sum(np.abs(fin_g - fin_y)) * cell)
    small = st["duhamel_constant"] / r * t_lo ** ((1 - s) / 2) * 2 / (1 - s)
    return KernelDifference(value, small, 2 * (2 / s) * T ** (-s / 2), l1_T * (2 / s) * T ** (-s / 2), r,
                            grid, diff, st)


def measure_difference_integral(metric: MetricField, y, r, s, settings=None, near_only=False, check=True):
    """``int K(x, y) |sqrt|g(x)| - sqrt|g(y)|| dx`` (n = 1).

    ``K = K_y + (K - K_y)``: the frozen part is integrated by adaptive
    quadrature in closed form, the correction on the grid of
    ``kernel_l1_difference``.  With ``near_only`` only ``B_r(y)`` is used.
    Returns ``(value, details)``.
    """
    if metric.dim != 1:
        raise NotImplementedError("measure-difference integrals are implemented for n = 1")
    s = _order(s)
    if check:
        require_admissible(metric, r, center=np.asarray(y, dtype=float).reshape(1), radius=max(r, 1.0))
    y0 = float(np.asarray(y, dtype=float).reshape(-1)[0])
    sq_y = float(metric.sqrt_det(np.array([[y0]]))[0])
    gy = metric.at([y0])[0, 0]
    C = cns(1, s)

    def dens(x):
        return abs(float(metric.sqrt_det(np.array([[x]]))[0]) - sq_y)

    def fy(x):
        return C * (math.sqrt(gy) * abs(x - y0)) ** (-(1 + s)) * dens(x)

    opts = dict(epsabs=1e-12, epsrel=1e-9, limit=400)
    near = 0.0
    for a, b in ((y0 - r, y0), (y0, y0 + r)):
        near += integrate.quad(fy, a, b, **opts)[0]
    details = {"near_frozen": near}
    if near_only:
        return near, details
    if metric.is_constant:
        return 0.0, {**details, "far_frozen": 0.0, "correction": 0.0}
    kd = kernel_l1_difference(metric, y0, r, s, settings, check=False)
    xs = kd.grid.points()[:, 0]
    a, b = kd.grid.lo[0], kd.grid.hi[0]
    far = 0.0
    # quad over the bounded far field in blocks; beyond the box use sup|dens| * closed-form tail
    for lo_, hi_ in ((a, y0 - r), (y0 + r, b)):
        pieces = np.linspace(lo_, hi_, max(2, int((hi_ - lo_) / r) + 1))
        for p0, p1 in zip(pieces[:-1], pieces[1:]):
            far += integrate.quad(fy, p0, p1, **opts)[0]
    sup_dens = max(abs(math.sqrt(metric.upper) - sq_y), abs(math.sqrt(metric.lower) - sq_y))
    box_tail = sup_dens * 2 * C * math.sqrt(gy) ** (-(1 + s)) * min(y0 - a, b - y0) ** (-s) / s
    dvals = np.abs(metric.sqrt_det(xs[:, None]) - sq_y)
    corr = float(np.sum(kd.difference * dvals) * kd.grid.h)
    value = near + far + corr
    details.update(far_frozen=far, correction=corr, box_tail_budget=box_tail,
                   correction_budget=sup_dens * (kd.small_t_budget + kd.large_t_budget))
    return value, details


def dirichlet_kernel_gap(metric: MetricField, p, r, rho, s, settings=None):
    """``sup_x int_{B_rho(p)} (K - K_{B_r(p)})(x, y) dV(y)`` over grid nodes of ``B_r(p)``.

    Time integral over ``(0, r^2]`` of the heat-kernel gap with weight
    ``t^{-1-s/2}`` (grid lengths in units of ``r``), plus the mass-bound
    tail ``(2/s) r^{-s}`` for ``t > r^2``.  Returns ``(value, details)``.
    """
    st = {"h": 1 / 128, "tau": 1 / 2 ** 14, "stage_steps": 32, "padding": 4.0, **(settings or {})}
    s = _order(s)
    if not 0 < rho < r:
        raise GeometryError(f"need 0 < rho < r, got rho={rho}, r={r}")
    n = metric.dim
    p = np.asarray(p, dtype=float).reshape(n)
    h = st["h"] * r
    plan = SolvePlan(h=h, tau=st["tau"] * r * r, padding=st["padding"], stage_steps=st["stage_steps"])
    T = r * r
    pad = st["padding"] * diffusion_length(metric, T)
    grid = Grid(p - r - pad, p + r + pad, h)
    pts = grid.points()
    inside = np.linalg.norm(pts - p, axis=1) < r - 1e-12
    ind = (np.linalg.norm(pts - p, axis=1) < rho).astype(float)
    whole = HeatSolver(metric, grid)
    dirich = HeatSolver(metric, grid, active=inside)
    # the gap starts at zero; integrate from a tiny time where it is negligible
    t_lo = min(T / 4096, (4 * h) ** 2)
    (acc_w, acc_d), _ = _accumulate(whole, ind[whole.idx], s, t_lo, T, plan,
                                    extra=[(dirich, ind[dirich.idx])])
    gap = whole.full(acc_w) - dirich.full(acc_d)
    gap_in = gap[inside]
    numeric = float(gap_in.max())
    tail = 2 / s * r ** (-s)
    return numeric + tail, {"numeric": numeric, "tail": tail, "argmax": pts[inside][int(np.argmax(gap_in))].tolist(),
                            "min_gap": float(gap_in.min())}


def write_estimate_csv(path, rows):
    """Rows of ``(r, value, bound, pass)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "value", "bound", "pass"])
        for r, v, b, ok in rows:
            w.writerow([repr(float(r)), repr(float(v)), repr(float(b)), str(bool(ok)).lower()])


def loglog_slope(rs, values):
    x, yv = np.log(np.asarray(rs, float)), np.log(np.asarray(values, float))
    return float(np.polyfit(x, yv, 1)[0])
