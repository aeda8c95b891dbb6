"""Riemannian metrics on R^n given as closed-form parameterized families.

A metric is evaluated pointwise as a field of symmetric positive-definite
matrices.  Points are arrays of shape ``(..., n)``; ``MetricField.eval``
returns ``(..., n, n)`` and ``MetricField.grad`` returns ``(..., n, n, n)``
where the last axis is the differentiation direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AdmissibilityError, InvalidMetricError


@dataclass(frozen=True)
class FractionalOrder:
    """Fractional order ``s`` and flatness exponent ``alpha`` with 0 < alpha < s < 1."""

    s: float
    alpha: float | None = None

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if self.alpha is not None and not 0.0 < self.alpha < self.s:
            raise ValueError(f"alpha must lie in (0, s={self.s}), got {self.alpha}")


def as_spd(g, tol=1e-12):
    """Validate a constant metric matrix and return it as a float array."""
    g = np.atleast_2d(np.asarray(g, dtype=float))
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise InvalidMetricError(f"metric must be a square matrix, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidMetricError("metric has non-finite entries")
    if not np.allclose(g, g.T, atol=tol * max(1.0, np.abs(g).max())):
        raise InvalidMetricError(f"metric is not symmetric:\n{g}")
    eig = np.linalg.eigvalsh(g)
    if eig[0] <= 0:
        raise InvalidMetricError(f"metric is not positive definite (eigenvalues {eig})")
    return g


def metric_norm(g_const, v):
    """Return ``|v|_g = sqrt(v^T g v)`` for a constant SPD matrix ``g``.

    ``v`` may be a single vector or a stack ``(..., n)``.
    """
    g = as_spd(g_const)
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape[-1] != g.shape[0]:
        raise ValueError(f"vector dimension {v.shape[-1]} does not match metric {g.shape}")
    q = np.einsum("...i,ij,...j->...", v, g, v)
    return np.sqrt(np.maximum(q, 0.0))


@dataclass(frozen=True)
class MetricField:
    """A smooth SPD matrix field on R^n.

    ``eval_fn`` and ``grad_fn`` take points of shape ``(m, n)``.  ``lower``
    and ``upper`` are the declared ellipticity bounds and ``grad_bound`` the
    declared sup-norm of ``Dg`` (max over unit directions of the operator
    norm of the directional derivative).
    """

    dim: int
    eval_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    grad_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lower: float
    upper: float
    grad_bound: float
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and x.ndim == 0:
            x = x.reshape(1)
        if x.shape[-1] != self.dim:
            # allow a flat array of 1-d points
            if self.dim == 1:
                x = x[..., None]
            else:
                raise ValueError(f"points must have trailing dimension {self.dim}")
        return x

    def eval(self, x):
        x = self._points(x)
        flat = x.reshape(-1, self.dim)
        return self.eval_fn(flat).reshape(x.shape[:-1] + (self.dim, self.dim))

    def grad(self, x):
        x = self._points(x)
        flat = x.reshape(-1, self.dim)
        return self.grad_fn(flat).reshape(x.shape[:-1] + (self.dim,) * 3)

    def sqrt_det(self, x):
        return np.sqrt(np.linalg.det(self.eval(x)))

    def at(self, y):
        """Frozen constant metric ``g(y)``."""
        return self.eval(np.asarray(y, dtype=float).reshape(1, self.dim))[0]

    @property
    def is_constant(self):
        return self.grad_bound == 0.0

    def rescaled(self, r):
        """The metric ``x -> g(x / r)``; its gradient bound scales like ``1/r``."""
        r = float(r)
        if r <= 0:
            raise ValueError("scale must be positive")
        return MetricField(
            dim=self.dim,
            eval_fn=lambda x: self.eval_fn(x / r),
            grad_fn=lambda x: self.grad_fn(x / r) / r,
            lower=self.lower,
            upper=self.upper,
            grad_bound=self.grad_bound / r,
            family=self.family,
            params={**self.params, "rescale": r * self.params.get("rescale", 1.0)},
        )

    def transformed(self, rotation, shift=None):
        """Push the metric forward by the isometry ``x -> R x + b``."""
        R = np.asarray(rotation, dtype=float)
        b = np.zeros(self.dim) if shift is None else np.asarray(shift, dtype=float)

        def ev(x):
            xp = (x - b) @ R  # R^T (x - b)
            return np.einsum("ij,mjk,lk->mil", R, self.eval_fn(xp), R)

        def gr(x):
            xp = (x - b) @ R
            d = self.grad_fn(xp)
            return np.einsum("ij,mjkp,lk,qp->milq", R, d, R, R)

        return MetricField(self.dim, ev, gr, self.lower, self.upper, self.grad_bound,
                           self.family, {**self.params, "isometry": True})


def constant_metric(g):
    g = as_spd(g)
    n = g.shape[0]
    eig = np.linalg.eigvalsh(g)

    def ev(x):
        return np.broadcast_to(g, (x.shape[0], n, n)).copy()

    def gr(x):
        return np.zeros((x.shape[0], n, n, n))

    return MetricField(n, ev, gr, float(eig[0]), float(eig[-1]), 0.0,
                       "constant", {"matrix": g.tolist()})


def euclidean(n):
    return constant_metric(np.eye(n))


def conformal_bump(n, amplitude, width, center=None):
    """``g(x) = (1 + a exp(-|x-c|^2 / (2 w^2))) Id``."""
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    a, w = float(amplitude), float(width)
    if 1 + min(a, 0.0) <= 0:
        raise InvalidMetricError("bump amplitude makes the metric degenerate")
    eye = np.eye(n)

    def ev(x):
        phi = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w * w))
        return (1 + a * phi)[:, None, None] * eye

    def gr(x):
        phi = np.exp(-np.sum((x - c) ** 2, axis=-1) / (2 * w * w))
        dphi = -(x - c) / (w * w) * phi[:, None]
        return a * eye[None, :, :, None] * dphi[:, None, None, :]

    lo, hi = (1 + min(a, 0.0), 1 + max(a, 0.0))
    return MetricField(n, ev, gr, lo, hi, abs(a) / w * np.exp(-0.5),
                       "conformal_bump", {"amplitude": a, "width": w, "center": c.tolist()})


def diagonal_sinusoidal(n, amplitude, scale=1.0, phase=0.0):
    """``g_ii(x) = 1 + a_i sin(x_i / scale + phase)``, off-diagonal entries zero."""
    a = np.broadcast_to(np.asarray(amplitude, dtype=float), (n,)).copy()
    if np.any(np.abs(a) >= 1):
        raise InvalidMetricError("sinusoidal amplitude must be below 1 in modulus")
    L, ph = float(scale), float(phase)
    idx = np.arange(n)

    def ev(x):
        out = np.zeros((x.shape[0], n, n))
        out[:, idx, idx] = 1 + a * np.sin(x / L + ph)
        return out

    def gr(x):
        out = np.zeros((x.shape[0], n, n, n))
        out[:, idx, idx, idx] = a * np.cos(x / L + ph) / L
        return out

    amax = float(np.abs(a).max())
    return MetricField(n, ev, gr, 1 - amax, 1 + amax, amax / L,
                       "diagonal_sinusoidal", {"amplitude": a.tolist(), "scale": L, "phase": ph})


FAMILIES = {
    "constant": lambda p: constant_metric(p["matrix"]),
    "euclidean": lambda p: euclidean(int(p["dim"])),
    "conformal_bump": lambda p: conformal_bump(int(p["dim"]), p["amplitude"], p["width"], p.get("center")),
    "diagonal_sinusoidal": lambda p: diagonal_sinusoidal(int(p["dim"]), p["amplitude"],
                                                         p.get("scale", 1.0), p.get("phase", 0.0)),
}


def metric_from_config(cfg):
    """Build a metric from ``{"family": name, ...params}``."""
    cfg = dict(cfg)
    name = cfg.pop("family")
    if name not in FAMILIES:
        raise InvalidMetricError(f"unknown metric family {name!r}; known: {sorted(FAMILIES)}")
    return FAMILIES[name](cfg)


def verification_grid(dim, radius, spacing=None, center=None):
    """Uniform tensor grid restricted to the closed ball ``B_radius(center)``.

    The default spacing is ``radius / 64``.
    """
    if radius <= 0:
        raise ValueError("verification radius must be positive")
    h = radius / 64 if spacing is None else float(spacing)
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    m = int(np.floor(radius / h + 1e-9))
    ax = np.arange(-m, m + 1) * h
    mesh = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    pts = mesh[np.sum(mesh ** 2, axis=-1) <= radius ** 2 * (1 + 1e-12)] + c
    return pts, {"radius": float(radius), "spacing": float(h), "center": c.tolist(), "points": int(len(pts))}


def gradient_norms(grad):
    """Sup over unit directions of ``||d/dv g||_op`` for a stack ``(m, n, n, n)``."""
    m, n = grad.shape[0], grad.shape[1]
    if n == 1:
        return np.abs(grad.reshape(m))
    # Max over directions of a matrix-valued linear form: sample the sphere densely.
    if n == 2:
        ang = np.linspace(0, np.pi, 181)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    else:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(400, n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.concatenate([dirs, np.eye(n)])
    dg = np.einsum("mijk,dk->mdij", grad, dirs)
    ops = np.abs(np.linalg.eigvalsh(dg)).max(axis=-1)
    return ops.max(axis=-1)


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    worst_ellipticity: tuple
    worst_lipschitz: float
    grid: dict

    def __bool__(self):
        return self.passed


def check_admissible(metric: MetricField, r, grid=None, radius=1.0, spacing=None, center=None):
    """Certify ``1/2 <= g <= 2`` and ``r ||Dg|| <= 1`` on a verification grid.

    ``grid`` may be an explicit ``(m, n)`` array; otherwise a tensor grid on
    ``B_radius(center)`` is used.  Sup-norms are grid maxima.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if grid is None:
        pts, info = verification_grid(metric.dim, radius, spacing, center)
    else:
        pts = np.asarray(grid, dtype=float).reshape(-1, metric.dim)
        info = {"points": int(len(pts)), "explicit": True}
    if len(pts) == 0:
        raise AdmissibilityError("empty verification grid")
    eig = np.linalg.eigvalsh(metric.eval(pts))
    lo, hi = float(eig[:, 0].min()), float(eig[:, -1].max())
    lip = float(r * gradient_norms(metric.grad(pts)).max())
    passed = lo >= 0.5 and hi <= 2.0 and lip <= 1.0
    return AdmissibilityReport(passed, (lo, hi), lip, info)


def require_admissible(metric, r, **kw):
    rep = check_admissible(metric, r, **kw)
    if not rep.passed:
        raise AdmissibilityError(
            f"metric {metric.family} is not admissible at r={r}: ellipticity {rep.worst_ellipticity}, "
            f"r*|Dg| = {rep.worst_lipschitz:.4g}")
    return rep
