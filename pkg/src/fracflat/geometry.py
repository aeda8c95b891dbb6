"""Charts, the local flatness assumption, and trapping cylinders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ChartEvaluationError, GeometryError
from .metric import MetricField, euclidean, gradient_norms, verification_grid

FLATNESS_TOL = 1.0 / 100


def _fd_jacobian(phi, x, eps=1e-6):
    """Central-difference Jacobian of ``phi`` at the rows of ``x``: ``(m, n, n)``."""
    m, n = x.shape
    jac = np.empty((m, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        jac[:, :, k] = (phi(x + e) - phi(x - e)) / (2 * eps)
    return jac


@dataclass(frozen=True)
class ChartSpec:
    """A closed-form diffeomorphism ``phi: B_R(0) -> R^n`` and a target metric.

    ``jacobian`` is optional; central differences are used when absent.
    """

    phi: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    domain_radius: float
    dim: int
    target_metric: MetricField | None = None
    jacobian: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def _target(self):
        return self.target_metric if self.target_metric is not None else euclidean(self.dim)

    def _jac(self, x):
        return self.jacobian(x) if self.jacobian is not None else _fd_jacobian(self.phi, x)

    def pullback(self, x):
        """``(phi^* g)(x) = Dphi(x)^T g(phi(x)) Dphi(x)`` for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = self.phi(x)
        J = self._jac(x)
        G = self._target().eval(y)
        out = np.einsum("mki,mkl,mlj->mij", J, G, J)
        bad = ~np.all(np.isfinite(out.reshape(len(x), -1)), axis=1) | ~np.all(np.isfinite(y), axis=1)
        if np.any(bad):
            raise ChartEvaluationError(x[np.argmax(bad)])
        return out

    def pullback_metric(self):
        """The pulled-back metric as a ``MetricField`` (derivative by central differences)."""
        eps = 1e-5

        def grad(x):
            n = self.dim
            out = np.empty((len(x), n, n, n))
            for k in range(n):
                e = np.zeros(n)
                e[k] = eps
                out[..., k] = (self.pullback(x + e) - self.pullback(x - e)) / (2 * eps)
            return out

        pts, _ = verification_grid(self.dim, self.domain_radius * (1 - 1e-9), self.domain_radius / 16)
        eig = np.linalg.eigvalsh(self.pullback(pts))
        gb = float(gradient_norms(grad(pts)).max())
        return MetricField(self.dim, self.pullback, grad, float(eig[:, 0].min()), float(eig[:, -1].max()),
                           gb, "pullback", {"domain_radius": self.domain_radius})


def check_flatness_assumption(chart: ChartSpec, r, spacing=None, return_details=False):
    """True iff ``||phi^*g - Id|| <= 1/100`` and ``r ||D phi^*g|| <= 1/100`` on the grid of ``B_r(0)``.

    Norms are spectral norms, sup-norms are grid maxima (default spacing
    ``r/64``).  The derivative is a central difference of the pulled-back
    metric with step ``min(h/4, 1e-4 r)`` kept inside the chart domain.
    """
    if r > chart.domain_radius * (1 + 1e-12):
        raise GeometryError(f"r={r} exceeds the chart domain radius {chart.domain_radius}")
    pts, info = verification_grid(chart.dim, r, spacing)
    pb = chart.pullback(pts)
    dev = float(np.abs(np.linalg.eigvalsh(pb - np.eye(chart.dim))).max())
    eps = min(info["spacing"] / 4, 1e-4 * r)
    n = chart.dim
    # keep the stencil inside the chart domain
    inner = pts * (1 - 2 * eps / r) if r + eps > chart.domain_radius else pts
    partials = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = eps
        partials.append((chart.pullback(inner + e) - chart.pullback(inner - e)) / (2 * eps))
    grad = np.stack(partials, axis=-1)
    dmax = float(gradient_norms(grad).max())
    lip = r * dmax
    ok = dev <= FLATNESS_TOL and lip <= FLATNESS_TOL
    if return_details:
        return ok, {"sup_deviation": dev, "scaled_derivative": lip, "grid": info}
    return ok


@dataclass(frozen=True)
class Cylinder:
    center: tuple
    direction: tuple
    radius: float
    half_width: float

    def __post_init__(self):
        nu = np.asarray(self.direction, dtype=float)
        if not np.isclose(np.linalg.norm(nu), 1.0, atol=1e-9):
            raise GeometryError(f"cylinder direction must be a unit vector, got {nu}")
        if self.half_width < 0:
            raise GeometryError("cylinder half_width must be nonnegative")
        if self.radius <= 0:
            raise GeometryError("cylinder radius must be positive")


def cylinder_contains(boundary_pts, cyl: Cylinder, tol=0.0):
    """True iff every point within ``cyl.radius`` of the center lies in the slab."""
    p = np.atleast_2d(np.asarray(boundary_pts, dtype=float)) - np.asarray(cyl.center)
    near = np.linalg.norm(p, axis=1) <= cyl.radius
    if not np.any(near):
        return True
    return bool(np.all(np.abs(p[near] @ np.asarray(cyl.direction)) <= cyl.half_width + tol))
