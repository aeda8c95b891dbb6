"""Heat kernels for metrics on R^n.

Closed forms for constant metrics, and a theta-scheme solver for

    du/dt = |g|^{-1/2} div(|g|^{1/2} g^{-1} grad u)

on a box with Dirichlet walls (n = 1: conservative finite volumes; n = 2:
P1 elements on a structured triangulation).  Both use a lumped mass matrix
``M = diag(sqrt|g| h^n)`` so that discrete masses are taken against dV_g.
Heat kernels are computed from a discrete delta: unit dV_g-mass spread over
the cell containing the source with multilinear weights.  With that choice
``H(t, x, y) = w_y^T R(t) M^{-1} w_x`` is exactly symmetric.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import FitError, GeometryError, ResolutionError
from .metric import MetricField, as_spd


# ---------------------------------------------------------------------------
# closed forms


def heat_constant(g_const, t, x, y):
    """``H_g(t, x, y) = (4 pi t)^{-n/2} exp(-|x - y|_g^2 / (4t))`` (density against dV_g)."""
    g = as_spd(g_const)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel time must be positive")
    n = g.shape[0]
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if n == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    q = np.einsum("...i,ij,...j->...", z, g, z)
    return (4 * np.pi * t) ** (-n / 2) * np.exp(-q / (4 * t))


def heat_constant_mass(g_const, t, radius_factor=12.0, order=200):
    """Mass of ``heat_constant`` against dV_g by tensor Gauss-Hermite-free quadrature.

    Used as an oracle: integrates on a box of half-width ``radius_factor *
    sqrt(t * lambda_max(g^{-1}))`` with Gauss-Legendre nodes per axis.
    """
    g = as_spd(g_const)
    n = g.shape[0]
    L = radius_factor * math.sqrt(t / np.linalg.eigvalsh(g)[0])
    xs, ws = np.polynomial.legendre.leggauss(order)
    xs, ws = xs * L, ws * L
    grids = np.meshgrid(*([xs] * n), indexing="ij")
    pts = np.stack(grids, axis=-1).reshape(-1, n)
    wt = np.prod(np.stack(np.meshgrid(*([ws] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
    vals = heat_constant(g, t, pts, np.zeros(n))
    return float(np.sum(vals * wt) * math.sqrt(np.linalg.det(g)))


def laplace_beltrami_of_gaussian(metric: MetricField, y, t, x):
    """``(Delta_g - Delta_{g(y)}) H_y(t, x, y)`` in closed form at the rows of ``x``.

    This is the Duhamel source term for the difference ``H - H_y``.
    """
    n = metric.dim
    x = np.asarray(x, dtype=float).reshape(-1, n)
    y = np.asarray(y, dtype=float).reshape(n)
    G = metric.at(y)
    Gi = np.linalg.inv(G)
    z = x - y
    Gz = z @ G
    q = np.einsum("mi,mi->m", z, Gz)
    H = (4 * np.pi * t) ** (-n / 2) * np.exp(-q / (4 * t))
    grad_H = -H[:, None] * Gz / (2 * t)
    hess_H = H[:, None, None] * (Gz[:, :, None] * Gz[:, None, :] / (4 * t * t) - G[None] / (2 * t))
    g = metric.eval(x)
    dg = metric.grad(x)  # (m, i, j, k) = d_k g_ij
    gi = np.linalg.inv(g)
    # b_j = |g|^{-1/2} d_i(|g|^{1/2} g^{ij}) = 0.5 tr(g^{-1} d_i g) g^{ij} + d_i g^{ij}
    tr_term = 0.5 * np.einsum("mab,mbai->mi", gi, dg)
    dgi = -np.einsum("mab,mbci,mcd->madi", gi, dg, gi)  # d_i (g^{-1})_{ad}
    b = np.einsum("mi,mij->mj", tr_term, gi) + np.einsum("miji->mj", dgi)
    lap_g = np.einsum("mij,mij->m", gi, hess_H) + np.einsum("mj,mj->m", b, grad_H)
    lap_y = np.einsum("ij,mij->m", Gi, hess_H)
    return lap_g - lap_y


# ---------------------------------------------------------------------------
# discretization


@dataclass(frozen=True)
class SolvePlan:
    """Discretization parameters.

    ``h`` spatial step, ``tau`` initial time step, ``theta`` scheme parameter
    (0.5 trapezoidal, 1 implicit Euler), ``padding`` multiple of the
    diffusion length ``sqrt(4 t lambda_max(g^{-1}))`` between sources and the
    Dirichlet walls.  ``stage_steps > 0`` doubles the step after every
    ``stage_steps`` steps (geometric time grids for long horizons);
    ``rannacher_steps`` implicit-Euler half steps damp the discrete delta.
    """

    h: float = 1 / 64
    tau: float = 1e-3
    theta: float = 0.5
    padding: float = 4.0
    stage_steps: int = 0
    rannacher_steps: int = 4

    def __post_init__(self):
        if self.h <= 0 or self.tau <= 0:
            raise ValueError("h and tau must be positive")
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")
        if self.padding <= 0:
            raise ValueError("padding must be positive")

    def refined(self, factor=2):
        return SolvePlan(self.h / factor, self.tau / factor, self.theta, self.padding,
                         self.stage_steps * factor if self.stage_steps else 0, self.rannacher_steps)


def time_schedule(t_final, plan: SolvePlan, t_start=0.0):
    """List of ``(tau, theta, nsteps)`` blocks reaching ``t_final`` exactly.

    Starts with ``rannacher_steps`` implicit-Euler steps of size ``tau/2``
    when ``theta < 1``.
    """
    span = t_final - t_start
    if span <= 0:
        raise ValueError("t_final must exceed the start time")
    blocks = []
    tau = min(plan.tau, span)
    t = 0.0
    if plan.theta < 1 and plan.rannacher_steps:
        k = plan.rannacher_steps
        tr = min(tau / 2, span / (k + 1))
        blocks.append((tr, 1.0, k))
        t += k * tr
    if plan.stage_steps <= 0:
        nsteps = max(1, int(math.ceil((span - t) / tau - 1e-9)))
        blocks.append(((span - t) / nsteps, plan.theta, nsteps))
        return blocks
    while t < span * (1 - 1e-14):
        remaining = span - t
        if remaining <= plan.stage_steps * tau * (1 + 1e-9):
            nsteps = max(1, int(math.ceil(remaining / tau - 1e-9)))
            blocks.append((remaining / nsteps, plan.theta, nsteps))
            break
        blocks.append((tau, plan.theta, plan.stage_steps))
        t += plan.stage_steps * tau
        tau *= 2
    return blocks


class Grid:
    """Uniform tensor grid covering a box, boundary nodes carry Dirichlet zeros.

    Nodes lie on the lattice ``h Z^n`` so that grids of different steps
    share nodes and lattice points are resolved exactly.
    """

    def __init__(self, lo, hi, h):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        self.dim = len(lo)
        if self.dim not in (1, 2):
            raise GeometryError("numeric heat solves support n in {1, 2}")
        self.h = float(h)
        kl = np.floor(lo / h + 1e-9)
        kh = np.maximum(np.ceil(hi / h - 1e-9), kl + 2)
        self.lo = kl * self.h
        self.hi = kh * self.h
        counts = (kh - kl).astype(int)
        self.shape = tuple(counts + 1)
        self.axes = [self.lo[k] + self.h * np.arange(self.shape[k]) for k in range(self.dim)]

    @property
    def size(self):
        return int(np.prod(self.shape))

    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def boundary_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            m[tuple(sl)] = True
            sl[k] = -1
            m[tuple(sl)] = True
        return m.reshape(-1)

    def interp_weights(self, x):
        """Sparse multilinear interpolation weights of point ``x`` (indices, weights)."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        rel = (x - self.lo) / self.h
        base = np.floor(rel).astype(int)
        if np.any(base < 0) or np.any(base >= np.array(self.shape) - 1):
            raise GeometryError(f"point {x} lies outside the grid box")
        frac = rel - base
        idx, wts = [], []
        for corner in np.ndindex(*([2] * self.dim)):
            c = np.array(corner)
            w = np.prod(np.where(c == 1, frac, 1 - frac))
            if w == 0:
                continue
            idx.append(int(np.ravel_multi_index(tuple(base + c), self.shape)))
            wts.append(float(w))
        return np.array(idx), np.array(wts)

    def interpolate(self, values, x):
        idx, w = self.interp_weights(x)
        return float(np.dot(values[idx], w))


def assemble(metric: MetricField, grid: Grid):
    """Lumped mass (vector) and stiffness (sparse) for the Laplace-Beltrami operator."""
    h = grid.h
    if grid.dim == 1:
        x = grid.axes[0]
        g = metric.eval(x[:, None])[:, 0, 0]
        mass = np.sqrt(g) * h
        xm = 0.5 * (x[1:] + x[:-1])
        a = 1 / np.sqrt(metric.eval(xm[:, None])[:, 0, 0])  # sqrt|g| g^{-1}
        c = a / h
        main = np.zeros(len(x))
        main[:-1] += c
        main[1:] += c
        S = sparse.diags([main, -c, -c], [0, 1, -1], format="csr")
        return mass, S
    nx, ny = grid.shape
    X, Y = grid.axes
    # two triangles per square: (i,j),(i+1,j),(i+1,j+1) and (i,j),(i+1,j+1),(i,j+1)
    ii, jj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    node = lambda i, j: i * ny + j
    tri_nodes = [np.stack([node(ii, jj), node(ii + 1, jj), node(ii + 1, jj + 1)], axis=1),
                 np.stack([node(ii, jj), node(ii + 1, jj + 1), node(ii, jj + 1)], axis=1)]
    pts = grid.points()
    rows, cols, vals = [], [], []
    mass = np.zeros(grid.size)
    area = 0.5 * h * h
    for tri in tri_nodes:
        P = pts[tri]  # (m, 3, 2)
        cen = P.mean(axis=1)
        g = metric.eval(cen)
        sq = np.sqrt(np.linalg.det(g))
        A = sq[:, None, None] * np.linalg.inv(g)
        # barycentric gradients
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        J = np.stack([e1, e2], axis=2)  # columns
        Jinv = np.linalg.inv(J)
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        G = np.einsum("ak,mkj->maj", ref, Jinv)  # (m, 3, 2)
        Ke = area * np.einsum("maj,mjk,mbk->mab", G, A, G)
        rows.append(np.repeat(tri, 3, axis=1).ravel())
        cols.append(np.tile(tri, (1, 3)).ravel())
        vals.append(Ke.ravel())
        np.add.at(mass, tri.ravel(), np.repeat(area * sq / 3, 3))
    S = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(grid.size, grid.size))
    return mass, S


class HeatSolver:
    """Theta-scheme propagation with Dirichlet zeros outside ``active`` nodes."""

    def __init__(self, metric: MetricField, grid: Grid, active=None):
        self.metric = metric
        self.grid = grid
        mass, S = assemble(metric, grid)
        act = ~grid.boundary_mask() if active is None else (np.asarray(active, bool) & ~grid.boundary_mask())
        self.active = act
        self.idx = np.flatnonzero(act)
        self.mass_full = mass
        self.M = mass[self.idx]
        self.S = S[self.idx][:, self.idx].tocsc()
        self._fact = {}

    def _solver(self, tau, theta):
        key = (round(tau, 15), theta)
        if key not in self._fact:
            A = (sparse.diags(self.M) + theta * tau * self.S).tocsc()
            self._fact[key] = spla.splu(A)
            if len(self._fact) > 8:
                self._fact.pop(next(iter(self._fact)))
        return self._fact[key]

    def delta(self, x0):
        """Discrete delta at ``x0`` restricted to active nodes (unit dV_g mass)."""
        idx, w = self.grid.interp_weights(x0)
        full = np.zeros(self.grid.size)
        full[idx] = w
        return full[self.idx] / self.M, full

    def full(self, u):
        out = np.zeros(self.grid.size)
        out[self.idx] = u
        return out

    def mass(self, u):
        return float(np.dot(self.M, u))

    def propagate(self, u, blocks, callback=None, source=None, t0=0.0):
        """Advance ``u`` through the schedule blocks.

        ``source(t)`` (optional) returns the right-hand side ``F`` at active
        nodes for ``du/dt = L u + F``.  ``callback(t, u)`` is called after
        every step.
        """
        t = t0
        Fk = source(t) if source is not None else None
        for tau, theta, nsteps in blocks:
            lu = self._solver(tau, theta)
            for _ in range(nsteps):
                rhs = self.M * u - (1 - theta) * tau * (self.S @ u)
                if source is not None:
                    Fn = source(t + tau)
                    rhs = rhs + tau * self.M * (theta * Fn + (1 - theta) * Fk)
                    Fk = Fn
                u = lu.solve(rhs)
                t += tau
                if callback is not None:
                    callback(t, u)
        return u


# ---------------------------------------------------------------------------
# heat fields


@dataclass
class HeatField:
    t: float
    source: tuple
    values: np.ndarray = field(repr=False)
    grid: Grid = field(repr=False)
    boundary_condition: str
    plan: SolvePlan
    mass: float
    mass_history: list = field(default_factory=list, repr=False)
    symmetry_residual: float | None = None

    def at(self, y):
        return self.grid.interpolate(self.values, y)

    def distances(self):
        return np.linalg.norm(self.grid.points() - np.asarray(self.source), axis=1)

    def header(self):
        return {
            "t": self.t,
            "source": list(self.source),
            "boundary_condition": self.boundary_condition,
            "plan": asdict(self.plan),
            "mass": self.mass,
            "symmetry_residual": self.symmetry_residual,
            "grid": {"lo": self.grid.lo.tolist(), "hi": self.grid.hi.tolist(), "h": self.grid.h},
        }

    def export(self, csv_path, json_path):
        pts = self.grid.points()
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(self.grid.dim)] + ["value"])
            for p, v in zip(pts, self.values):
                w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        with open(json_path, "w") as fh:
            json.dump(self.header(), fh, indent=2, sort_keys=True)


def diffusion_length(metric: MetricField, t):
    return math.sqrt(4 * t / metric.lower)


def default_box(metric, t, points, padding):
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, metric.dim)
    pad = padding * diffusion_length(metric, t)
    return pts.min(axis=0) - pad, pts.max(axis=0) + pad


def check_resolution(plan: SolvePlan, t, metric):
    """Reject plans that cannot resolve the kernel at time ``t`` (theta < 1)."""
    if plan.theta >= 1:
        return
    ell = math.sqrt(t * metric.lower)
    if plan.h > ell / 2:
        raise ResolutionError(f"h={plan.h} does not resolve the diffusion length {ell:.3g} at t={t}",
                              suggested_step=plan.tau)
    if plan.stage_steps == 0 and plan.tau > t / 8:
        raise ResolutionError(f"tau={plan.tau} gives fewer than 8 steps up to t={t}",
                              suggested_step=t / 8)


def solve_heat(metric: MetricField, plan: SolvePlan, t, x0, box=None, targets=(), record_mass=True,
               check=True):
    """Heat kernel ``y -> H(t, x0, y)`` on a box with Dirichlet walls.

    ``box`` is ``(lo, hi)``; by default the box is padded by
    ``plan.padding`` diffusion lengths around ``x0`` and ``targets``.
    """
    if metric.dim not in (1, 2):
        raise GeometryError("numeric heat solves support n in {1, 2}")
    if t < plan.tau * (0.5 if plan.stage_steps else 1.0) - 1e-15:
        raise ValueError(f"t={t} is shorter than the time step {plan.tau}")
    if check:
        check_resolution(plan, t, metric)
    x0 = np.asarray(x0, dtype=float).reshape(metric.dim)
    if box is None:
        lo, hi = default_box(metric, t, [x0, *targets], plan.padding)
        bc = "whole_space_truncated"
    else:
        lo, hi = box
        bc = "dirichlet"
    grid = Grid(lo, hi, plan.h)
    solver = HeatSolver(metric, grid)
    u, _ = solver.delta(x0)
    hist = []
    cb = (lambda tt, uu: hist.append((tt, solver.mass(uu)))) if record_mass else None
    u = solver.propagate(u, time_schedule(t, plan), cb)
    return HeatField(float(t), tuple(x0), solver.full(u), grid, bc, plan, solver.mass(u), hist)


def heat_symmetry_residual(metric, plan, t, x0, y, box):
    """``|H(t, x0, y) - H(t, y, x0)|`` relative to their mean, from two solves on one box."""
    a = solve_heat(metric, plan, t, x0, box=box).at(y)
    b = solve_heat(metric, plan, t, y, box=box).at(x0)
    return abs(a - b) / max(abs(a + b) / 2, 1e-300), a, b


# ---------------------------------------------------------------------------
# Duhamel route


def duhamel_difference(metric: MetricField, y, plan: SolvePlan, t, box=None, t_start=None):
    """``x -> H(t, x, y) - H_y(t, x, y)`` by Duhamel's formula.

    Solves ``dw/dt = Delta_g w + (Delta_g - Delta_{g(y)}) H_y`` with
    ``w(t_start) = 0`` and the source in closed form, on a padded box.
    Returns ``(grid, values)``; values are zero for constant metrics.
    """
    y = np.asarray(y, dtype=float).reshape(metric.dim)
    if box is None:
        lo, hi = default_box(metric, t, [y], plan.padding)
    else:
        lo, hi = box
    grid = Grid(lo, hi, plan.h)
    if metric.is_constant:
        return grid, np.zeros(grid.size)
    solver = HeatSolver(metric, grid)
    pts = grid.points()[solver.idx]
    ts = plan.h ** 2 / 2 if t_start is None else t_start

    def source(tt):
        return laplace_beltrami_of_gaussian(metric, y, max(tt, ts), pts)

    p = SolvePlan(plan.h, min(plan.tau, ts), plan.theta, plan.padding,
                  plan.stage_steps or 64, 0)
    w = solver.propagate(np.zeros(len(solver.idx)), time_schedule(t, p, ts), source=source, t0=ts)
    return grid, solver.full(w)


def direct_difference(metric: MetricField, y, plan: SolvePlan, t, box=None):
    """``H(t, x, y) - H_y(t, x, y)`` as a numeric solve minus the closed form."""
    y = np.asarray(y, dtype=float).reshape(metric.dim)
    if box is None:
        box = default_box(metric, t, [y], plan.padding)
    field_ = solve_heat(metric, plan, t, y, box=box, record_mass=False, check=False)
    pts = field_.grid.points()
    exact = heat_constant(metric.at(y), t, pts, y)
    return field_.grid, field_.values - exact * (~field_.grid.boundary_mask())


def l1_norm(grid: Grid, values):
    return float(np.sum(np.abs(values)) * grid.h ** grid.dim)


# ---------------------------------------------------------------------------
# Gaussian upper bounds


@dataclass(frozen=True)
class GaussianFit:
    C: float
    c: float
    passed: bool
    slack: float
    required_slack: float
    samples: int


def _samples(fields, rel_floor=1e-10):
    ts, d2, vals, dims = [], [], [], set()
    for f in fields:
        dims.add(f.grid.dim)
        d = f.distances()
        v = f.values
        keep = (v > rel_floor * v.max()) & (~f.grid.boundary_mask())
        ts.append(np.full(keep.sum(), f.t))
        d2.append(d[keep] ** 2)
        vals.append(v[keep])
    if len(dims) != 1:
        raise FitError("samples mix dimensions")
    return np.concatenate(ts), np.concatenate(d2), np.concatenate(vals), dims.pop()


def gaussian_bound_fit(samples, slack=1.05, envelope=None):
    """Fit ``log H <= log C - (n/2) log t - c |x-y|^2 / t`` by least squares.

    ``samples`` are heat fields, or tuples ``(t, |x-y|^2, H, n)`` of arrays.
    With ``envelope=(C, c)`` the fit is skipped and that envelope is tested.
    ``passed`` iff every sample lies below ``slack`` times the envelope;
    ``required_slack`` is the smallest slack that would pass.
    """
    if isinstance(samples, tuple) and len(samples) == 4:
        t, d2, H, n = (np.asarray(samples[0], float), np.asarray(samples[1], float),
                       np.asarray(samples[2], float), int(samples[3]))
    else:
        t, d2, H, n = _samples(samples)
    if len(np.unique(t)) < 2:
        raise FitError("need samples at two or more distinct times")
    ok = H > 0
    t, d2, H = t[ok], d2[ok], H[ok]
    q = d2 / t
    target = np.log(H) + 0.5 * n * np.log(t)
    if envelope is None:
        A = np.stack([np.ones_like(q), -q], axis=1)
        coef, *_ = np.linalg.lstsq(A, target, rcond=None)
        logC, c = coef
        C = float(np.exp(logC))
    else:
        C, c = map(float, envelope)
        logC = math.log(C)
    excess = target - (logC - c * q)
    req = float(np.exp(excess.max()))
    return GaussianFit(C, float(c), bool(req <= slack), float(slack), req, int(len(H)))


# ---------------------------------------------------------------------------
# Dirichlet kernels


def _ball_mask(grid: Grid, center, radius):
    return np.linalg.norm(grid.points() - np.asarray(center), axis=1) < radius - 1e-12


def dirichlet_gap_history(metric: MetricField, p, r, rho, plan: SolvePlan, t_final, box_padding=None,
                          n_boundary=9):
    """Time series of ``u(t, x) = (e^{t Delta} - e^{t Delta_{B_r}}) 1_{B_rho}(x)`` on ``B_r(p)``.

    Returns ``(times, gap)`` where ``gap[k]`` is the sup over grid nodes of
    ``B_r(p)`` and ``(times, profiles, nodes)`` for the sampled nodes.
    """
    if not rho < r:
        raise GeometryError(f"need rho < r, got rho={rho}, r={r}")
    p = np.asarray(p, dtype=float).reshape(metric.dim)
    pad = (box_padding if box_padding is not None else plan.padding) * diffusion_length(metric, t_final)
    grid = Grid(p - r - pad, p + r + pad, plan.h)
    pts = grid.points()
    inside = _ball_mask(grid, p, r)
    ind = (np.linalg.norm(pts - p, axis=1) < rho).astype(float)
    whole = HeatSolver(metric, grid)
    dirich = HeatSolver(metric, grid, active=inside)
    u_w = ind[whole.idx].copy()
    u_d = ind[dirich.idx].copy()
    times, gaps, profiles = [], [], []
    sel_full = np.flatnonzero(inside)
    pos_w = np.searchsorted(whole.idx, sel_full)
    pos_d = np.searchsorted(dirich.idx, sel_full)
    blocks = time_schedule(t_final, plan)
    state = {"w": None}

    def cb_w(tt, uu):
        state["w"] = uu

    # march both in lockstep so gaps are available per step
    t = 0.0
    for tau, theta, nsteps in blocks:
        for _ in range(nsteps):
            u_w = whole.propagate(u_w, [(tau, theta, 1)])
            u_d = dirich.propagate(u_d, [(tau, theta, 1)])
            t += tau
            diff = u_w[pos_w] - u_d[pos_d]
            times.append(t)
            gaps.append(float(diff.max()))
            profiles.append(diff)
    return np.array(times), np.array(gaps), (np.array(profiles), pts[sel_full])


def solve_heat_dirichlet_gap(metric: MetricField, p, r, rho, plan: SolvePlan, t):
    """``sup_{x in B_r(p)} int_{B_rho(p)} (H - H_{B_r(p)})(t, x, y) dV(y)`` (nonnegative)."""
    if not rho < r:
        raise GeometryError(f"need rho < r, got rho={rho}, r={r}")
    if t > r * r * (1 + 1e-12):
        raise GeometryError(f"need t <= r^2, got t={t}, r={r}")
    times, gaps, _ = dirichlet_gap_history(metric, p, r, rho, plan, t)
    return float(gaps[-1])
