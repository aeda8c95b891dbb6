"""Dyadic cylinder analysis of boundaries, the Harnack dichotomy, and the limit equation."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import FitError, GrowthError, PreconditionError
from .geometry import Cylinder, cylinder_contains
from .quadrature import gauss_nodes


def _canonical(nu):
    """Unit vector with its largest-magnitude component positive (first one on ties)."""
    nu = np.asarray(nu, dtype=float)
    nu = nu / np.linalg.norm(nu)
    k = int(np.argmax(np.abs(nu) > np.abs(nu).max() * (1 - 1e-12)))
    return nu if nu[k] > 0 else -nu


def _half_width(p, nu):
    proj = p @ nu
    return 0.5 * (proj.max() - proj.min())


def fit_cylinder(boundary_pts, center, radius):
    """Thinnest slab ``{|(x - center) . nu - m| <= width}`` containing the points of ``B_radius(center)``.

    In the plane the minimum is exact (minimum-width direction over convex
    hull edges).  In higher dimension the smallest principal direction is
    refined locally.  Returns ``(nu, width)`` with ``nu`` canonically signed.
    """
    pts = np.atleast_2d(np.asarray(boundary_pts, dtype=float))
    c = np.asarray(center, dtype=float).reshape(-1)
    n = pts.shape[1]
    p = pts[np.linalg.norm(pts - c, axis=1) <= radius] - c
    if len(p) < n:
        raise FitError(f"need at least {n} points in the ball, found {len(p)}")
    if np.ptp(p, axis=0).max() == 0:
        raise FitError("degenerate point cloud: all points coincide")
    _, sv, vt = np.linalg.svd(p - p.mean(axis=0), full_matrices=False)
    pca = vt[-1]
    if n == 2:
        cands = [pca]
        try:
            hull = ConvexHull(p)
            v = p[hull.vertices]
            e = np.roll(v, -1, axis=0) - v
            nrm = np.stack([-e[:, 1], e[:, 0]], axis=1)
            nrm = nrm[np.linalg.norm(nrm, axis=1) > 0]
            cands += list(nrm / np.linalg.norm(nrm, axis=1)[:, None])
            p_eval = v
        except (QhullError, ValueError):
            p_eval = p  # collinear: the principal direction is exact
        cands = [_canonical(u) for u in cands]
        widths = np.array([_half_width(p_eval, u) for u in cands])
        best = widths.min()
        tied = [u for u, w in zip(cands, widths) if w <= best + 1e-15 * max(1.0, radius)]
        nu = min(tied, key=lambda u: tuple(np.round(u, 12)))
        return nu, float(_half_width(p, nu))

    def obj(theta):
        u = pca + theta
        return _half_width(p, u / np.linalg.norm(u))

    res = optimize.minimize(obj, np.zeros(n), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    u = pca + res.x
    nu = _canonical(u)
    w = _half_width(p, nu)
    w0 = _half_width(p, _canonical(pca))
    if w0 <= w:
        nu, w = _canonical(pca), w0
    return nu, float(w)


@dataclass
class FlatnessReport:
    scales: list
    directions: list
    widths: list
    alpha_fit: float
    normals_drift: list
    drift_bound: list
    drift_ok: bool
    used_scales: list
    omitted: list = field(default_factory=list)
    resolution: float = 0.0

    def to_dict(self):
        d = asdict(self)
        d["alpha_fit"] = "inf" if math.isinf(self.alpha_fit) else self.alpha_fit
        return d

    def write(self, json_path, csv_path):
        with open(json_path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = len(self.directions[0]) if self.directions else 0
            w.writerow(["l", "w_l"] + [f"nu_{k}" for k in range(n)] + ["drift"])
            for i, (l, wl, nu) in enumerate(zip(self.scales, self.widths, self.directions)):
                dr = self.normals_drift[i] if i < len(self.normals_drift) else ""
                w.writerow([l, repr(wl)] + [repr(c) for c in nu] + [repr(dr) if dr != "" else ""])


def sampling_resolution(pts):
    """Squared median nearest-neighbour spacing of the cloud (sagitta scale of a sampled curve)."""
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.median(d[:, 1]) ** 2)


def dyadic_flatness_report(boundary_pts, base_point, k_max, alpha, r=1.0, C_drift=None, drift_factor=2.0,
                           resolution=None, min_points=None):
    """Cylinder fits on ``B_{r 2^-l}(base_point)`` for ``l = 0..k_max``.

    ``alpha_fit = -slope - 1`` where ``slope`` is the least-squares slope of
    ``log2 w_l`` against ``l`` over scales whose width exceeds ten times the
    sampling resolution (``+inf`` when every width is below that level).
    Normals drift ``|nu_l - nu_{l+1}|`` is compared with
    ``C_drift 2^{-l alpha_fit}`` (``alpha`` when the fit is infinite); by
    default ``C_drift = drift_factor * |nu_0 - nu_1|``, i.e. later scales
    must follow the fitted rate.
    Scales with fewer than ``10 n`` points are omitted with a warning.
    """
    pts = np.atleast_2d(np.asarray(boundary_pts, dtype=float))
    n = pts.shape[1]
    base = np.asarray(base_point, dtype=float).reshape(n)
    need = 10 * n if min_points is None else min_points
    res = sampling_resolution(pts) if resolution is None else float(resolution)
    scales, dirs, widths, omitted = [], [], [], []
    for l in range(k_max + 1):
        rad = r * 2.0 ** (-l)
        count = int(np.sum(np.linalg.norm(pts - base, axis=1) <= rad))
        if count < need:
            warnings.warn(f"scale l={l} has {count} < {need} points; omitted", stacklevel=2)
            omitted.append(l)
            continue
        nu, w = fit_cylinder(pts, base, rad)
        scales.append(l)
        dirs.append(nu.tolist())
        widths.append(w)
    usable = [i for i, w in enumerate(widths) if w > 10 * res]
    if len(usable) >= 2:
        ls = np.array([scales[i] for i in usable], float)
        lw = np.log2([widths[i] / r for i in usable])
        alpha_fit = float(-np.polyfit(ls, lw, 1)[0] - 1)
    elif not usable:
        alpha_fit = math.inf
    else:
        alpha_fit = float("nan")
    drift = [float(np.linalg.norm(np.subtract(dirs[i], dirs[i + 1]))) for i in range(len(dirs) - 1)]
    expo = alpha_fit if math.isfinite(alpha_fit) else alpha
    if C_drift is None:
        C_drift = drift_factor * (drift[0] * 2.0 ** (scales[0] * expo) if drift else 0.0)
    bound = [float(C_drift * 2.0 ** (-scales[i] * expo)) for i in range(len(drift))]
    ok = all(d <= b + 1e-12 for d, b in zip(drift, bound))
    return FlatnessReport(scales, dirs, widths, alpha_fit, drift, bound, bool(ok), [scales[i] for i in usable],
                          omitted, res)


@dataclass
class DichotomyOutcome:
    branch: str
    delta: float
    witness: list
    both_hold: bool = False
    level: float = 0.0

    def to_dict(self):
        return asdict(self)


def _frame(normal):
    """Rotation of the plane taking the unit vector ``normal`` to ``e_2``."""
    a, b = np.asarray(normal, dtype=float) / np.linalg.norm(normal)
    return np.array([[b, -a], [a, b]])


def harnack_dichotomy_check(boundary_pts, delta, k, alpha, r, normals=None, base_point=None):
    """Which side of the cylinder ``B_{r 2^-k delta}`` the boundary leaves.

    ``upper``: every point of ``B_{r 2^-k delta}`` has ``x^n <= r 2^{-k(1+alpha)} (1 - delta^2)``;
    ``lower``: every point has ``x^n >= -`` the same level; ``neither`` returns
    the violating extreme points as witnesses.  Hypothesis cylinders
    ``{|x . nu_l| <= r 2^{-l(1+alpha)}}`` on ``B_{r 2^-l}`` are checked for
    ``l = 0..k``.  Coordinates are centred at ``base_point``; with
    ``normals`` (one unit vector per scale, plane only) the cylinders use
    ``nu_l`` and the branch test is done in the frame where ``nu_k = e_2``.
    Witness points are returned in the input coordinates.
    """
    pts = np.atleast_2d(np.asarray(boundary_pts, dtype=float))
    orig = pts
    n = pts.shape[1]
    if base_point is not None:
        pts = pts - np.asarray(base_point, dtype=float).reshape(n)
    en = np.eye(n)[-1]
    for l in range(k + 1):
        nu = en if normals is None else np.asarray(normals[l], dtype=float)
        cyl = Cylinder(tuple(np.zeros(n)), tuple(nu / np.linalg.norm(nu)), r * 2.0 ** (-l),
                       r * 2.0 ** (-l * (1 + alpha)))
        if not cylinder_contains(pts, cyl, tol=1e-12):
            raise PreconditionError(f"boundary leaves the hypothesis cylinder at scale l={l}")
    if normals is not None:
        if n != 2:
            raise NotImplementedError("tilted frames are implemented in the plane")
        pts = pts @ _frame(normals[k]).T
    rad = r * 2.0 ** (-k) * delta
    sel = np.flatnonzero(np.linalg.norm(pts, axis=1) <= rad)
    level = r * 2.0 ** (-k * (1 + alpha)) * (1 - delta ** 2)
    if len(sel) == 0:
        return DichotomyOutcome("upper", delta, [], True, level)
    i_hi = sel[np.argmax(pts[sel, -1])]
    i_lo = sel[np.argmin(pts[sel, -1])]
    upper = pts[i_hi, -1] <= level
    lower = pts[i_lo, -1] >= -level
    # witnesses are reported in the caller's coordinates
    hi, lo = orig[i_hi], orig[i_lo]
    if upper:
        return DichotomyOutcome("upper", delta, [hi.tolist()], bool(lower), level)
    if lower:
        return DichotomyOutcome("lower", delta, [lo.tolist()], False, level)
    warnings.warn(f"Harnack dichotomy fails at k={k}, delta={delta}: points {hi.tolist()} and {lo.tolist()} "
                  "leave both sides", stacklevel=2)
    return DichotomyOutcome("neither", delta, [hi.tolist(), lo.tolist()], False, level)


# ---------------------------------------------------------------------------
# the limit equation


def growth_check(f, alpha, C, dim=1, samples=None):
    """True iff ``|f(x)| <= C (1 + |x|^{1+alpha})`` at the sample points.

    Samples: the origin and radii ``10^-3 .. 10^6`` (log spaced) along both
    directions of the line, or 16 directions in the plane.
    """
    radii = np.concatenate([[0.0], np.logspace(-3, 6, 200)])
    if samples is not None:
        x = np.asarray(samples, dtype=float).reshape(-1, dim)
    elif dim == 1:
        x = np.concatenate([radii, -radii])[:, None]
    else:
        th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        x = (radii[:, None, None] * np.stack([np.cos(th), np.sin(th)], axis=1)[None]).reshape(-1, 2)
    vals = np.asarray(f(x[:, 0] if dim == 1 else x), dtype=float)
    r = np.linalg.norm(x, axis=1)
    return bool(np.all(np.abs(vals) <= C * (1 + r ** (1 + alpha)) * (1 + 1e-12)))


def frac_laplacian_graph(f, order, x, R=None, growth=None, dim=1, near_levels=16, tol=1e-10,
                         return_budget=False):
    """``p.v. int_{B_R} (f(x + z) - f(x)) |z|^{-dim-(1+s)} dz`` with ``(1+s)/2 = order``.

    Opposite points ``z, -z`` are paired; the innermost part is extrapolated
    geometrically.  Without ``R`` the integral runs over all of ``R^dim``;
    this needs ``growth=(alpha, C)`` with ``alpha < s`` and
    ``|f| <= C (1 + |x|^{1+alpha})`` (checked), and the tail beyond the last
    annulus is bounded by the growth envelope (``return_budget``).
    """
    s = 2 * order - 1
    if not 0 < s < 1:
        raise ValueError("order must lie in (1/2, 1)")
    x = np.asarray(x, dtype=float).reshape(dim)
    fx = float(np.asarray(f(x[0] if dim == 1 else x[None])).reshape(-1)[0])
    if dim == 1:
        def pair(t):
            return np.asarray(f(x[0] + t), dtype=float) + np.asarray(f(x[0] - t), dtype=float) - 2 * fx
        weight = lambda t: t ** (-2 - s)
    elif dim == 2:
        th, wth = gauss_nodes([0.0], [np.pi], 32)
        e = np.stack([np.cos(th), np.sin(th)], axis=1)

        def pair(t):
            z = t[:, None, None] * e[None]
            fp = np.asarray(f((x + z).reshape(-1, 2)), dtype=float).reshape(len(t), -1)
            fm = np.asarray(f((x - z).reshape(-1, 2)), dtype=float).reshape(len(t), -1)
            return (fp + fm - 2 * fx) @ wth
        weight = lambda t: t ** (-2 - s)
    else:
        raise NotImplementedError("the limit operator is implemented for graphs over R or R^2")

    split = 1.0 if R is None else float(R)
    hi = split * 2.0 ** (-np.arange(near_levels))
    t, w = gauss_nodes(hi / 2, hi)
    per = (pair(t) * weight(t) * w).reshape(near_levels, -1).sum(axis=1)
    q = 2.0 ** (s - 1)
    value = float(per.sum() + per[-1] * q / (1 - q))
    budget = 0.0
    if R is None:
        if growth is None:
            raise GrowthError("an unbounded integration domain needs a growth bound (alpha, C)")
        ga, gC = growth
        if not ga < s:
            raise GrowthError(f"growth exponent 1+{ga} is too large for order {order}: the tail diverges")
        if not growth_check(f, ga, gC, dim):
            raise GrowthError(f"f violates |f| <= {gC}(1 + |x|^(1+{ga}))")
        ax = float(np.linalg.norm(x))
        ang = 1.0 if dim == 1 else np.pi

        def tail_bound(T):
            T = max(T, ax)
            return ang * ((2 * gC + 2 * abs(fx)) * T ** (-1 - s) / (1 + s)
                          + 2 * gC * 2 ** (1 + ga) * T ** (ga - s) / (s - ga))

        edges = []
        T = split
        while tail_bound(T) > tol and len(edges) < 2000:
            edges.append(T)
            T *= 2
        if edges:
            lo = np.array(edges)
            t, w = gauss_nodes(lo, 2 * lo)
            value += float(np.sum(pair(t) * weight(t) * w))
        budget = tail_bound(T)
    return (value, budget) if return_budget else value
