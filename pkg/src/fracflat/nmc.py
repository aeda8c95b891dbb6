"""Nonlocal mean curvature, viscosity-sense bounds and fractional perimeter.

``H_s(y) = p.v. int (chi_E - chi_CE)(x) K(x, y) dx`` at a boundary point
``y``.  In polar coordinates about ``y`` this is
``C_{n,s} int rho^{-1-s} A(rho) d rho`` with ``A(rho)`` the weighted signed
measure of ``E`` on the sphere of radius ``rho``; the principal value is
the limit over dyadic annuli shrinking to ``y``.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError, GeometryError, NotOnBoundaryError
from .kernel import KernelModel, angular_weight, cns, kernel_l1_difference, measure_difference_integral
from .metric import MetricField, as_spd, require_admissible
from .quadrature import (gauss_nodes, log_radial_nodes, paired_circle_measure, ray_crossings,
                         signed_circle_measure)
from .region import Ball, Region, Subgraph


@dataclass
class NMCResult:
    value: float
    near_field: float
    tail: float
    delta_sequence: list
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, y=None):
        out = {"value": self.value, "near_field": self.near_field, "tail": self.tail,
               "converged": self.converged}
        if y is not None:
            out["y"] = [float(c) for c in np.asarray(y).reshape(-1)]
        return out


def _weight_fn(g, s):
    """Angular weight ``|e(phi)|_g^{-(2+s)}`` or ``None`` when it is constant."""
    p = 2 + s
    if np.allclose(g, g[0, 0] * np.eye(2)):
        return None, g[0, 0] ** (-p / 2)

    def w(phi):
        c, sn = np.cos(phi), np.sin(phi)
        return (g[0, 0] * c * c + 2 * g[0, 1] * c * sn + g[1, 1] * sn * sn) ** (-p / 2)

    return w, 1.0


def _check_boundary(region, y, tol):
    lv = float(np.asarray(region.level(np.asarray(y, dtype=float).reshape(1, -1))).reshape(-1)[0])
    if abs(lv) > tol * max(1.0, float(np.linalg.norm(y))):
        raise NotOnBoundaryError(f"point {np.asarray(y).tolist()} is not on the boundary (level {lv:.3g})")


def _far_radius(region, y, start, C, wmax, s, tail_tol, max_doublings=60):
    """Smallest dyadic multiple of ``start`` beyond which the far field is described in closed form."""
    rho = start
    for _ in range(max_doublings):
        kind, b = region.far_field(y, rho)
        if kind in ("inside", "outside") and b == 0:
            return rho, kind, 0.0
        if kind == "symmetric":
            bound = C * wmax * 8 * b * rho ** (-1 - s) / (1 + s)
            if bound <= tail_tol:
                return rho, kind, bound
        rho *= 2
    kind, b = region.far_field(y, rho)
    return rho, "unresolved", np.inf


def nmc_pv(region: Region, y, model: KernelModel, pv_tol=1e-6, r0=None, route="paired", samples=1024,
           levels=16, tail_tol=None, boundary_tol=1e-8):
    """Principal-value NMC of ``region`` at the boundary point ``y``.

    ``route`` is ``"paired"`` (antipodal pairing of directions),
    ``"unpaired"`` (full spheres, the two signs integrated separately, on a
    shifted angular grid and radially jittered annuli) or ``"graph"`` (column
    integrals for subgraphs in the plane, see ``graph_nmc``).  The near field
    uses ``levels`` dyadic annuli ``B_{r0 2^-j} minus B_{r0 2^-j-1}``; the
    part inside the last one is extrapolated from the geometric decay of
    annulus contributions.  ``delta_sequence`` holds the extrapolated
    partial values and ``converged`` means its last two entries differ by
    less than ``pv_tol``.  For numeric kernel models the
    kernel is frozen at ``y`` and integrated against ``sqrt|g(y)| dx``.
    """
    n = region.dim
    y = np.asarray(y, dtype=float).reshape(n)
    s = model.s
    g = as_spd(model.frozen(y))
    scale = 1.0 if model.variant == "constant_metric" else math.sqrt(np.linalg.det(g))
    _check_boundary(region, y, boundary_tol)
    r0 = float(r0 if r0 is not None else region.boundary_distance_scale())
    tail_tol = pv_tol if tail_tol is None else tail_tol
    if route == "graph":
        if not isinstance(region, Subgraph) or n != 2:
            raise GeometryError("the graph route needs a subgraph in the plane")
        res = graph_nmc(region.f, np.array([y[0]]), s, g, sup_abs=region.sup_abs, return_parts=True,
                        far_tail=region.far_tail, knots=region.nodes)
        v, near, tail, seq = res
        return NMCResult(scale * v[0], scale * near[0], scale * tail[0],
                         [(d, scale * p) for d, p in seq[0]], True, {"route": "graph"})
    if n == 1:
        res = _nmc_line(region, y, g, s, r0, pv_tol, tail_tol, route)
    elif n == 2:
        res = _nmc_plane(region, y, g, s, r0, pv_tol, tail_tol, route, samples, levels)
    else:
        raise NotImplementedError("principal-value NMC is implemented for n in {1, 2}")
    if scale != 1.0:
        res.value *= scale
        res.near_field *= scale
        res.tail *= scale
        res.delta_sequence = [(d, scale * p) for d, p in res.delta_sequence]
        res.diagnostics["frozen_metric"] = g.tolist()
    return res


def extrapolated_partials(contrib, s, axis=-1):
    """Partial sums of dyadic annulus contributions plus the extrapolated remainder.

    Contributions are modelled as ``u q1^j + v q2^j`` with ``q1 = 2^{s-1}``
    (curvature term) and ``q2 = 2^{s-2}`` (third-order term, present when the
    boundary is only C^2 at the base point, e.g. at a spline node).  ``u, v``
    come from the last two annuli; the first entry uses ``q1`` alone.
    """
    c = np.moveaxis(np.asarray(contrib, dtype=float), axis, -1)
    q1, q2 = 2.0 ** (s - 1), 2.0 ** (s - 2)
    run = np.cumsum(c, axis=-1)
    rem = np.empty_like(c)
    rem[..., 0] = c[..., 0] * q1 / (1 - q1)
    if c.shape[-1] > 1:
        prev, last = c[..., :-1], c[..., 1:]
        u = (prev - last / q2) / (1 / q1 - 1 / q2)
        v = last - u
        rem[..., 1:] = u * q1 / (1 - q1) + v * q2 / (1 - q2)
    return np.moveaxis(run + rem, -1, axis)


def _nmc_plane(region, y, g, s, r0, pv_tol, tail_tol, route, samples, levels):
    C = cns(2, s)
    wfun, wconst = _weight_fn(g, s)
    wmax = float(np.linalg.eigvalsh(g)[0] ** (-(2 + s) / 2))
    W = angular_weight(g, s)
    breaks = region.radial_breakpoints(y)
    paired = route == "paired"
    if route not in ("paired", "unpaired"):
        raise ValueError(f"unknown route {route!r}")
    # generic (irrational) angular shift and radial scale for the unpaired grid
    offset = 0.0 if paired else 0.7548776662466927 * 2 * np.pi / samples
    shrink = 1.0 if paired else 1.0 / 1.1380277569097614

    def profile(rho):
        if paired:
            return wconst * paired_circle_measure(region.level, y, rho, wfun, samples)
        plus, minus = signed_circle_measure(region.level, y, rho, wfun, samples, offset, split=True)
        return wconst * (plus - minus)

    cuts_all = np.asarray(region.radial_cuts(y), dtype=float)

    def annulus_integrals(edges_lo, edges_hi):
        rs, ws, owner = [], [], []
        for k, (a, b) in enumerate(zip(edges_lo, edges_hi)):
            inner = cuts_all[(cuts_all > a * (1 + 1e-12)) & (cuts_all < b * (1 - 1e-12))]
            for lo, hi in zip(np.concatenate([[a], inner]), np.concatenate([inner, [b]])):
                rho, w = log_radial_nodes(lo, hi, 8, [p for p in breaks if lo <= p <= hi])
                rs.append(rho)
                ws.append(w)
                owner.append(np.full(len(rho), k))
        rho, w, owner = np.concatenate(rs), np.concatenate(ws), np.concatenate(owner)
        vals = C * rho ** (-1 - s) * profile(rho) * w
        return np.bincount(owner, vals, minlength=len(edges_lo))

    # far field
    columns = isinstance(region, Subgraph) and region.far_tail is not None
    if columns:
        # closed-form exterior data: exact columns outside a disc, polar
        # quadrature resolving the oscillation inside it
        rho_far = r0 * 2.0 ** max(1, math.ceil(math.log2(8.0 / r0)))
        kind, far_bound = "columns", 0.0
    else:
        rho_far, kind, far_bound = _far_radius(region, y, r0, C, wmax, s, tail_tol)
    mid = 0.0
    if rho_far > r0:
        k = int(round(math.log2(rho_far / r0)))
        lo = r0 * 2.0 ** np.arange(k)
        if columns:
            cuts = np.unique(np.concatenate([lo, [rho_far], np.arange(math.ceil(r0 / 0.25), rho_far / 0.25) * 0.25]))
            cuts = cuts[(cuts >= r0) & (cuts <= rho_far)]
            mid = float(annulus_integrals(cuts[:-1], cuts[1:]).sum())
        else:
            mid = float(annulus_integrals(lo, 2 * lo).sum())
    analytic = {"inside": 1.0, "outside": -1.0}.get(kind, 0.0) * C * W * rho_far ** (-s) / s
    if columns:
        analytic = _outside_disc(region, y, g, s, rho_far)
    tail = mid + analytic
    # near field on dyadic annuli; the remainder inside the last annulus is
    # extrapolated (see extrapolated_partials)
    top = r0 * shrink
    near = float(annulus_integrals([top], [r0])[0]) if top < r0 else 0.0
    hi = top * 2.0 ** (-np.arange(levels))
    contrib = annulus_integrals(hi / 2, hi)
    extrap = near + extrapolated_partials(contrib, s)
    seq = [(float(h / 2), float(tail + e)) for h, e in zip(hi, extrap)]
    near = float(extrap[-1])
    converged = abs(extrap[-1] - extrap[-2]) < pv_tol
    diag = {"route": route, "rho_far": rho_far, "far_kind": kind, "far_bound": far_bound, "levels": levels}
    if kind == "unresolved":
        converged = False
    return NMCResult(tail + near, near, tail, seq, converged and kind != "unresolved", diag)


def _nmc_line(region, y, g, s, r0, pv_tol, tail_tol, route):
    C = cns(1, s) * g[0, 0] ** (-(1 + s) / 2)
    rho_far, kind, far_bound = _far_radius(region, y, r0, C, 1.0, s, tail_tol)
    levels = 60
    rho_min = r0 * 2.0 ** (-levels)
    cuts = {rho_min, r0, rho_far}
    for d in (1.0, -1.0):
        cuts.update(ray_crossings(region.level, y, [d], rho_min, rho_far).tolist())
    edges = np.array(sorted(cuts))
    a, b = edges[:-1], edges[1:]
    m = 0.5 * (a + b)
    sig = lambda pts: -np.sign(region.level(pts))
    S = sig(y + m[:, None]) + sig(y - m[:, None])
    seg = C * S * (a ** (-s) - b ** (-s)) / s
    analytic = {"inside": 1.0, "outside": -1.0}.get(kind, 0.0) * 2 * C * rho_far ** (-s) / s
    tail = float(seg[a >= r0].sum()) + analytic
    seq = []
    for j in range(levels):
        delta = r0 * 2.0 ** (-j - 1)
        part = float(seg[(a >= delta) & (b <= r0)].sum())
        seq.append((delta, tail + part))
    converged = abs(seq[-1][1] - seq[-2][1]) < pv_tol and kind != "unresolved"
    near = seq[-1][1] - tail
    return NMCResult(tail + near, near, tail, seq, converged,
                     {"route": route, "rho_far": rho_far, "far_kind": kind, "far_bound": far_bound})


# ---------------------------------------------------------------------------
# subgraphs in the plane by column integrals


def column_profile(v, s):
    """``G(v) = int_0^v (1 + u^2)^{-(2+s)/2} du`` in closed form."""
    v = np.asarray(v, dtype=float)
    b = 0.5 * (1 + s)
    W = v * v / (1 + v * v)
    return np.sign(v) * 0.5 * special.beta(0.5, b) * special.betainc(0.5, b, W)


def _column_far(pair, a, fa, s, C, A, bb, g22, T, far_tail, t_linear, chunk, sup_abs, tol):
    """Paired columns with ``|t| >= T`` (see ``graph_nmc``)."""
    far = np.zeros(len(a))
    if t_linear > T:
        nchunk = int(math.ceil((t_linear - T) / chunk))
        edges = np.linspace(T, t_linear, nchunk + 1)
        t, w = gauss_nodes(edges[:-1], edges[1:])
        far += (pair(t) * w).sum(axis=1)
        T = t_linear
    if far_tail is not None:
        c = bb * math.sqrt(g22) / A
        slope = (1 + c * c) ** (-(2 + s) / 2)
        far += 2 * C * A ** (-2 - s) * slope * (np.asarray(far_tail(a, T, s), dtype=float)
                                                 - 2 * fa * T ** (-1 - s) / (1 + s))
        return far
    bound = lambda T: 8 * C * sup_abs * A ** (-2 - s) * T ** (-1 - s) / (1 + s)
    far_edges = []
    while bound(T) > tol and T < 1e12:
        far_edges.append(T)
        T *= 2
    if far_edges:
        lo = np.array(far_edges)
        t, w = gauss_nodes(lo, 2 * lo)
        far += (pair(t) * w).sum(axis=1)
    return far


def _column_pair(f, a, fa, s, C, A, bb, g22):
    def pair(t):
        tt = t[None, :]
        dp = f((a[:, None] + tt).ravel()).reshape(len(a), -1) - fa[:, None]
        dm = f((a[:, None] - tt).ravel()).reshape(len(a), -1) - fa[:, None]
        k = 2 * C * (A * tt) ** (-1 - s) / math.sqrt(g22)
        q = math.sqrt(g22) / (A * tt)
        return k * (column_profile((dp + bb * tt) * q, s) + column_profile((dm - bb * tt) * q, s))
    return pair


def _outside_disc(region, y, g, s, R, t_linear=64.0, chunk=0.25):
    """Exact contribution of ``|x - y| > R`` for a subgraph, by vertical columns.

    Full columns ``|t| >= R`` as in ``graph_nmc``; for ``|t| < R`` the
    column parts above and below the disc cancel except for a sliver where
    the graph leaves the disc, plus a smooth asymmetric term when ``g12 != 0``.
    """
    C = cns(2, s)
    g22 = g[1, 1]
    A = math.sqrt(np.linalg.det(g) / g22)
    bb = g[0, 1] / g22
    a = np.array([y[0]])
    fa = np.array([y[1]])
    pair = _column_pair(region.f, a, fa, s, C, A, bb, g22)
    far = float(_column_far(pair, a, fa, s, C, A, bb, g22, R, region.far_tail, t_linear, chunk,
                            region.sup_abs, 1e-12)[0])

    def Phi(u, t):
        return (A * abs(t)) ** (-1 - s) / math.sqrt(g22) * column_profile(math.sqrt(g22) * (u + bb * t)
                                                                          / (A * abs(t)), s)

    def inner(t):
        v = math.sqrt(max(R * R - t * t, 0.0))
        D = float(region.f(np.array([y[0] + t]))[0]) - y[1]
        Dc = min(max(D, -v), v)
        return C * (2 * Phi(D, t) - 2 * Phi(Dc, t) + Phi(v, t) + Phi(-v, t))

    ts = np.linspace(-R, R, 4097)[1:-1]
    D = np.abs(np.asarray(region.f(y[0] + ts)) - y[1])
    M = 1.5 * float(D.max()) + 1e-12
    t_lo = math.sqrt(max(R * R - M * M, 0.0))
    opts = {"limit": 400, "epsabs": 1e-13, "epsrel": 1e-11}
    if bb != 0:
        sliver = integrate.quad(inner, -R, R, points=[0.0, -t_lo, t_lo], **opts)[0]
    else:
        sliver = integrate.quad(inner, -R, -t_lo, **opts)[0] + integrate.quad(inner, t_lo, R, **opts)[0]
    return far + sliver


def graph_nmc(f, a, s, g=None, sup_abs=None, t_split=0.25, near_levels=16, tol=1e-12, return_parts=False,
              far_tail=None, t_linear=64.0, chunk=0.25, knots=None):
    """NMC of ``{x2 < f(x1)}`` at the points ``(a_i, f(a_i))`` for a constant metric.

    Integrates each vertical column in closed form: with
    ``D(t) = f(a + t) - f(a)`` the column at ``a + t`` contributes
    ``2 C (A|t|)^{-1-s} g22^{-1/2} G((D + b t) sqrt(g22) / (A|t|))`` where
    ``A^2 = det g / g22`` and ``b = g12 / g22``.  Columns at ``+t`` and ``-t``
    are paired.  Dyadic ``t``-annuli shrink to ``t_split 2^-near_levels``
    and the remaining near part is extrapolated geometrically (ratio
    ``2^{s-1}``, with a third-order correction, see ``extrapolated_partials``).

    Far columns up to ``t_linear`` are integrated on chunks of length at
    most ``chunk``.  Beyond that, ``far_tail(a, T, s)`` (when given) must
    return ``int_T^inf t^{-2-s} (f(a+t) + f(a-t)) dt``; the column integrand
    is then linear in ``D`` up to a remainder of order ``sup|f|^2 T^{-2-s}``.
    Without ``far_tail`` dyadic annuli extend until the bound
    ``8 C sup|f| A^{-2-s} T^{-1-s} / (1+s)`` drops below ``tol``; this is
    only accurate for data that do not oscillate at large distances.

    ``knots`` lists abscissae where ``f`` is not smooth (spline nodes); the
    column quadrature is split at the distances ``|knot - a_i|`` and the
    near field starts below the closest one.
    """
    g = np.eye(2) if g is None else as_spd(g)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    fa = np.asarray(f(a), dtype=float)
    C = cns(2, s)
    g22 = g[1, 1]
    A = math.sqrt(np.linalg.det(g) / g22)
    bb = g[0, 1] / g22
    if sup_abs is None or not np.isfinite(sup_abs):
        sup_abs = float(np.abs(fa).max()) + 1.0
    pair = _column_pair(f, a, fa, s, C, A, bb, g22)
    tcuts = np.empty(0)
    if knots is not None:
        d = np.abs(np.asarray(knots, dtype=float)[None, :] - a[:, None]).ravel()
        tcuts = np.unique(np.round(d[d > 1e-12], 13))
        t_split = min(t_split, float(tcuts[0]))

    # near annuli
    hi = t_split * 2.0 ** (-np.arange(near_levels))
    t, w = gauss_nodes(hi / 2, hi)
    vals = pair(t) * w
    per = vals.reshape(len(a), near_levels, -1).sum(axis=2)
    partials = extrapolated_partials(per, s)
    near = partials[:, -1]
    far = np.zeros(len(a))
    T = t_split
    if len(tcuts) > 1:
        edges = tcuts[tcuts >= t_split]
        t, w = gauss_nodes(edges[:-1], edges[1:])
        far += (pair(t) * w).sum(axis=1)
        T = float(edges[-1])
    far += _column_far(pair, a, fa, s, C, A, bb, g22, T, far_tail, max(t_linear, T), chunk, sup_abs, tol)
    value = near + far
    if not return_parts:
        return value
    seq = []
    for i in range(len(a)):
        run = far[i] + partials[i]
        seq.append([(float(h / 2), float(p)) for h, p in zip(hi, run)])
    return value, near, far, seq


# ---------------------------------------------------------------------------
# viscosity-sense bounds


@dataclass
class ViscosityReport:
    tested_points: list
    sides: list
    values: list
    bound: float
    passed: bool
    vacuous: bool = False
    skipped: int = 0

    @property
    def side(self):
        return sorted(set(self.sides))

    def to_dict(self):
        return asdict(self)


def _normal(region, x, h=1e-6):
    n = len(x)
    grad = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        grad[k] = (region.level((x + e)[None])[0] - region.level((x - e)[None])[0]) / (2 * h)
    nrm = np.linalg.norm(grad)
    if nrm == 0:
        raise GeometryError(f"level function has vanishing gradient at {x.tolist()}")
    return grad / nrm


def touching_paraboloid(region, x, side, opening=4.0, radius=0.25, shift=1e-9, samples=64):
    """True iff a paraboloid of opening ``opening`` touches the boundary at ``x`` from ``side``.

    ``side`` is ``"interior_ball"`` (paraboloid below the boundary, inside
    ``E``) or ``"exterior_ball"``.  Points ``x + t tau - (opening/2 t^2 +
    shift) nu`` for ``|t| <= radius`` must lie strictly inside (resp. outside
    with ``nu`` reversed).  A touching paraboloid contains the ball of radius
    ``1/opening`` tangent at ``x``.
    """
    x = np.asarray(x, dtype=float)
    nu = _normal(region, x)
    sgn = 1.0 if side == "interior_ball" else -1.0
    n = len(x)
    if n == 1:
        pts = np.array([x - sgn * nu * (shift + t) for t in np.linspace(0, radius, samples)])
    else:
        tau = np.array([-nu[1], nu[0]])
        t = np.linspace(-radius, radius, samples)
        pts = x + t[:, None] * tau - sgn * (0.5 * opening * t ** 2 + shift)[:, None] * nu
        # fill the region between the paraboloid and depth 1/opening
        depth = np.linspace(0, 1 / opening, 8)[1:]
        pts = np.concatenate([pts] + [x + t[:, None] * tau * (1 - d * opening)
                                      - sgn * (0.5 * opening * (t * (1 - d * opening)) ** 2 + shift + d)[:, None] * nu
                                      for d in depth])
    lv = region.level(pts)
    return bool(np.all(lv < 0)) if side == "interior_ball" else bool(np.all(lv > 0))


def viscosity_bound_check(region, omega: Ball, C0, r, model, points=None, opening=4.0, count=64, jobs=1,
                          **nmc_kw):
    """Test the viscosity-sense bound ``|H_s| <= C0 r^{-s}`` on ``omega``.

    At boundary points with an interior tangent ball the NMC must be
    ``<= C0 r^{-s}``; with an exterior tangent ball ``>= -C0 r^{-s}``.
    Tangent balls are detected by a touching paraboloid with opening
    ``opening`` over a window of radius ``r/4``.
    """
    s = model.s
    bound = C0 * r ** (-s)
    if points is None:
        points = region.sample_boundary(omega.center, omega.radius, count)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tests = []
    skipped = 0
    for x in points:
        found = False
        for side in ("interior_ball", "exterior_ball"):
            if touching_paraboloid(region, x, side, opening, r / 4):
                tests.append((x, side))
                found = True
        skipped += not found
    uniq = {tuple(x): None for x, _ in tests}
    pts = [np.array(p) for p in uniq]

    def one(p):
        return nmc_pv(region, p, model, **nmc_kw).value

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            vals = list(ex.map(one, pts))
    else:
        vals = [one(p) for p in pts]
    for p, v in zip(uniq, vals):
        uniq[p] = v
    values = [uniq[tuple(x)] for x, _ in tests]
    sides = [side for _, side in tests]
    ok = all((v <= bound) if side == "interior_ball" else (v >= -bound) for v, side in zip(values, sides))
    return ViscosityReport([x.tolist() for x, _ in tests], sides, [float(v) for v in values], float(bound),
                           bool(ok), vacuous=not tests, skipped=skipped)


# ---------------------------------------------------------------------------
# frozen coefficients


def frozen_coefficient_nmc(region, y, metric: MetricField, s, r=1.0, budget="calibrated", calibration=None,
                           **nmc_kw):
    """NMC with the kernel frozen at ``y`` plus the certified freezing budget.

    ``frozen_value`` integrates ``K_{g(y)}`` against ``dx``;
    ``full_estimate = sqrt|g(y)| frozen_value`` approximates the NMC with
    kernel ``K`` against ``dV``.  ``gap = C_y + r^{-s} C_measure / sqrt|g(y)|``
    where ``C_y`` bounds ``int |K - K_y| dx``; with ``budget="computed"`` both
    terms come from ``kernel_l1_difference`` and ``measure_difference_integral``,
    with ``"calibrated"`` from the calibration constants times ``r^{-s}``.
    """
    require_admissible(metric, r, center=np.asarray(y, dtype=float).reshape(metric.dim), radius=max(r, 1.0))
    y = np.asarray(y, dtype=float).reshape(metric.dim)
    g_y = metric.at(y)
    sq = math.sqrt(np.linalg.det(g_y))
    res = nmc_pv(region, y, KernelModel.constant(g_y, s), **nmc_kw)
    if metric.is_constant:
        gap, parts = 0.0, {"kernel_freezing": 0.0, "measure": 0.0}
    elif budget == "computed":
        kd = kernel_l1_difference(metric, y, r, s, check=False)
        md, _ = measure_difference_integral(metric, y, r, s, check=False)
        parts = {"kernel_freezing": kd.value + kd.small_t_budget + kd.large_t_estimate, "measure": md / sq}
        gap = sum(parts.values())
    elif budget == "calibrated":
        if calibration is None:
            from .harness.calibration import load_calibration
            calibration = load_calibration()
        parts = {"kernel_freezing": calibration["C_effacement"] * r ** (-s),
                 "measure": calibration["C_measure"] * r ** (-s) / sq}
        gap = sum(parts.values())
    else:
        raise ValueError(f"unknown budget {budget!r}")
    return {"full_estimate": sq * res.value, "frozen_value": res.value, "gap": gap, "gap_parts": parts,
            "converged": res.converged}


# ---------------------------------------------------------------------------
# fractional perimeter


def _perimeter_line(region, omega, s, g, eps):
    """Per_s(E; Omega) on the line, inner integrals in closed form."""
    C = cns(1, s) * g ** (-(1 + s) / 2)
    lo, hi = omega
    # boundary points of E inside a generous window (E has locally finite boundary)
    span = max(hi - lo, 1.0)
    xs = np.linspace(lo - 1e3 * span, hi + 1e3 * span, 200001)
    lv = region.level(xs[:, None])
    k = np.flatnonzero(np.sign(lv[:-1]) != np.sign(lv[1:]))
    bps = []
    for i in k:
        bps.append(float(_bisect_1d(lambda x: region.level(np.array([[x]]))[0], xs[i], xs[i + 1])))
    bps = np.array(sorted(bps))

    def chi(x):
        return region.level(np.array([[x]]))[0] < 0

    def opposite_mass(x, a, b):
        """int_{(a, b) with chi != chi(x)} |x - y|^{-1-s} dy for a <= b (may be infinite)."""
        cx = chi(x)
        edges = np.concatenate([[a], bps[(bps > a) & (bps < b)], [b]])
        tot = 0.0
        for p, q in zip(edges[:-1], edges[1:]):
            m = 0.5 * (p + q) if np.isfinite(p) and np.isfinite(q) else (q - 1.0 if np.isfinite(q) else p + 1.0)
            # an interval straddling x only arises within roundoff of a boundary point
            if chi(m) == cx or p < x < q:
                continue
            tot += _power_mass(x, p, q, s)
        return tot

    def integrand(x):
        return C * (2 * opposite_mass(x, -np.inf, np.inf) - opposite_mass(x, lo, hi))

    pts = [p for p in bps if lo < p < hi]
    val, err = integrate.quad(integrand, lo, hi, points=pts or None, epsabs=eps, epsrel=eps, limit=500)
    return val, err


def _power_mass(x, p, q, s):
    """``int_p^q |x - y|^{-1-s} dy`` for an interval not containing ``x`` in its interior."""
    def F(d):  # int_d^inf u^{-1-s} du
        return np.inf if d == 0 else d ** (-s) / s
    if q <= x:
        return F(x - q) - (F(x - p) if np.isfinite(p) else 0.0)
    if p >= x:
        return F(p - x) - (F(q - x) if np.isfinite(q) else 0.0)
    raise GeometryError("interval contains the evaluation point")


def _bisect_1d(fn, a, b, iters=80):
    fa = fn(a) < 0
    for _ in range(iters):
        m = 0.5 * (a + b)
        if (fn(m) < 0) == fa:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def fractional_perimeter(region, omega, model, eps=1e-6, return_trace=False):
    """``Per_s(E; Omega) = int int_{R^n x R^n minus (C Omega)^2} |chi_E(x) - chi_E(y)| K(x, y)``.

    Written as ``int_Omega (2 I(x, R^n) - I(x, Omega)) dx`` with
    ``I(x, U) = int_U |chi_E(x) - chi_E(y)| K(x, y) dy``.  Implemented on the
    line (``omega`` an interval ``(a, b)`` or a ``Ball``), where inner
    integrals are exact.  The outer quadrature is repeated at tolerances
    ``eps, eps/4, eps/16``; the sequence must be Cauchy, otherwise a
    ``ConvergenceError`` carries the trace.
    """
    if region.dim != 1:
        raise NotImplementedError("fractional perimeter is implemented for n = 1")
    if isinstance(omega, Ball):
        omega = (omega.center[0] - omega.radius, omega.center[0] + omega.radius)
    lo, hi = map(float, omega)
    if not lo < hi:
        raise GeometryError("empty domain")
    g = float(as_spd(model.frozen(np.array([0.5 * (lo + hi)])))[0, 0])
    trace = []
    for k in range(3):
        tol = eps / 4 ** k
        v, err = _perimeter_line(region, (lo, hi), model.s, g, tol)
        trace.append((tol, float(v), float(err)))
    diffs = [abs(trace[i + 1][1] - trace[i][1]) for i in range(2)]
    scale = max(abs(trace[-1][1]), 1.0)
    if not (diffs[-1] <= 10 * eps * scale and diffs[-1] <= diffs[0] + 10 * eps * scale):
        raise ConvergenceError("perimeter quadrature did not settle under refinement", trace)
    return (trace[-1][1], trace) if return_trace else trace[-1][1]


# ---------------------------------------------------------------------------
# reports


def write_nmc_json(path, results):
    """``results``: list of ``(y, NMCResult)``."""
    with open(path, "w") as fh:
        json.dump([r.to_dict(y) for y, r in results], fh, indent=2, sort_keys=True)


def write_nmc_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        n = len(np.asarray(results[0][0]).reshape(-1)) if results else 0
        w.writerow([f"y{k}" for k in range(n)] + ["value", "near_field", "tail", "converged"])
        for y, r in results:
            w.writerow([repr(float(c)) for c in np.asarray(y).reshape(-1)]
                       + [repr(r.value), repr(r.near_field), repr(r.tail), str(r.converged).lower()])
