"""Measurable sets of R^n described by a level function.

Every region exposes ``level(x)`` which is negative inside ``E`` and
positive in the complement; the signed indicator ``chi_E - chi_CE`` is
``-sign(level)``.  Level functions need not be distances, only their sign
and continuity across the boundary are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator


class Region:
    dim: int

    def level(self, x):
        raise NotImplementedError

    def signed_indicator(self, x):
        lv = self.level(x)
        return np.where(lv < 0, 1.0, np.where(lv > 0, -1.0, 0.0))

    def contains(self, x):
        return self.level(x) < 0

    def complement(self):
        return Boolean("complement", (self,))

    def far_field(self, y, radius):
        """Describe ``E`` beyond ``B_radius(y)``.

        Returns ``(kind, bound)`` where ``kind`` is ``"inside"`` (all of the
        far field lies in ``E``), ``"outside"``, ``"symmetric"`` (the far
        field is antisymmetric about ``y`` so paired contributions vanish), or
        ``"unknown"``; ``bound`` is a height scale controlling the deviation
        from the stated kind (0 when exact).
        """
        return "unknown", np.inf

    def boundary_distance_scale(self):
        return 1.0

    def radial_breakpoints(self, y):
        """Distances from ``y`` at which circles about ``y`` become tangent to the boundary."""
        return []

    def radial_cuts(self, y):
        """Distances from ``y`` at which the radial profile loses smoothness (no grading needed)."""
        return []

    def sample_boundary(self, center, radius, count):
        """Boundary points inside ``B_radius(center)``; ``count`` controls density."""
        raise NotImplementedError(f"{type(self).__name__} has no boundary sampler; pass points explicitly")


def _pts(x, dim):
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


@dataclass(frozen=True)
class HalfSpace(Region):
    """``E = {x : x . normal < offset}``; ``normal`` is the outward unit normal."""

    normal: tuple
    offset: float = 0.0

    def __post_init__(self):
        nu = np.asarray(self.normal, dtype=float)
        nrm = np.linalg.norm(nu)
        if nrm == 0:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", tuple(nu / nrm))

    @property
    def dim(self):
        return len(self.normal)

    def level(self, x):
        x = _pts(x, self.dim)
        return x @ np.asarray(self.normal) - self.offset

    def far_field(self, y, radius):
        d = abs(float(np.asarray(y, dtype=float).reshape(-1) @ np.asarray(self.normal)) - self.offset)
        return "symmetric", d

    def sample_boundary(self, center, radius, count):
        nu = np.asarray(self.normal)
        c = np.asarray(center, dtype=float).reshape(-1)
        foot = c - (c @ nu - self.offset) * nu
        if self.dim == 1:
            return foot[None] if np.linalg.norm(foot - c) <= radius else np.empty((0, 1))
        if self.dim != 2:
            raise NotImplementedError("boundary sampling is implemented for n <= 2")
        tang = np.array([-nu[1], nu[0]])
        half = np.sqrt(max(radius ** 2 - np.linalg.norm(foot - c) ** 2, 0.0))
        t = np.linspace(-half, half, count)
        return foot + t[:, None] * tang


@dataclass(frozen=True)
class Ball(Region):
    """``B_radius(center)`` when ``inside`` is true, its complement otherwise."""

    center: tuple
    radius: float
    inside: bool = True

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(np.asarray(self.center, dtype=float).reshape(-1)))

    @property
    def dim(self):
        return len(self.center)

    def level(self, x):
        x = _pts(x, self.dim)
        lv = np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius
        return lv if self.inside else -lv

    def far_field(self, y, radius):
        reach = np.linalg.norm(np.asarray(y, dtype=float).reshape(-1) - np.asarray(self.center)) + self.radius
        if radius >= reach:
            return ("outside" if self.inside else "inside"), 0.0
        return "unknown", np.inf

    def boundary_distance_scale(self):
        return self.radius

    def radial_breakpoints(self, y):
        d = np.linalg.norm(np.asarray(y, dtype=float).reshape(-1) - np.asarray(self.center))
        return [b for b in (abs(d - self.radius), d + self.radius) if b > 0]

    def sample_boundary(self, center, radius, count):
        c0 = np.asarray(self.center)
        if self.dim == 1:
            pts = np.array([[c0[0] - self.radius], [c0[0] + self.radius]])
        elif self.dim == 2:
            th = np.linspace(0, 2 * np.pi, count, endpoint=False)
            pts = c0 + self.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
        else:
            raise NotImplementedError("boundary sampling is implemented for n <= 2")
        keep = np.linalg.norm(pts - np.asarray(center, dtype=float).reshape(-1), axis=1) <= radius
        return pts[keep]


@dataclass(frozen=True)
class Subgraph(Region):
    """``E = {x : x^n < f(x')}``.

    ``f`` is a callable on arrays of shape ``(m, n-1)`` (or ``(m,)`` when
    ``n = 2``).  ``sup_abs`` bounds ``|f|`` globally and is used for
    far-field control.
    """

    f: Callable = field(repr=False)
    dim: int = 2
    sup_abs: float = np.inf
    nodes: tuple | None = field(default=None, repr=False, compare=False)
    far_tail: Callable | None = field(default=None, repr=False, compare=False)

    def level(self, x):
        x = _pts(x, self.dim)
        xp = x[..., 0] if self.dim == 2 else x[..., :-1]
        return x[..., -1] - np.asarray(self.f(xp))

    def far_field(self, y, radius):
        y = np.asarray(y, dtype=float).reshape(-1)
        # beyond the radius the boundary lies in the slab |x^n| <= sup_abs
        return "symmetric", float(self.sup_abs + abs(y[-1]))

    def radial_cuts(self, y):
        if self.nodes is None or self.dim != 2:
            return []
        x = np.asarray(self.nodes, dtype=float)
        pts = np.stack([x, np.asarray(self.f(x), dtype=float)], axis=1)
        d = np.linalg.norm(pts - np.asarray(y, dtype=float).reshape(2), axis=1)
        return sorted(d[d > 0].tolist())

    def sample_boundary(self, center, radius, count):
        if self.dim != 2:
            raise NotImplementedError("boundary sampling is implemented for n = 2 subgraphs")
        c = np.asarray(center, dtype=float).reshape(-1)
        nodes = getattr(self, "nodes", None)
        if nodes is not None:
            x = np.asarray(nodes, dtype=float)
            x = x[np.abs(x - c[0]) <= radius]
        else:
            x = np.linspace(c[0] - radius, c[0] + radius, count)
        pts = np.stack([x, np.asarray(self.f(x), dtype=float)], axis=1)
        return pts[np.linalg.norm(pts - c, axis=1) <= radius]

    @classmethod
    def from_grid(cls, grid, values, exterior=None, sup_abs=None):
        """Subgraph of a gridded function (cubic interpolation).

        ``grid`` is a 1-d array (n = 2) or a tuple of two 1-d arrays (n = 3).
        Outside the grid box ``exterior`` (closed form) is used when given,
        otherwise the function is extended by its value at the nearest edge.
        """
        values = np.asarray(values, dtype=float)
        if isinstance(grid, (tuple, list)) and len(grid) == 2 and np.ndim(grid[0]) == 1:
            interp = RegularGridInterpolator(tuple(np.asarray(g, float) for g in grid), values,
                                             method="cubic", bounds_error=False, fill_value=None)
            lo = np.array([g[0] for g in grid])
            hi = np.array([g[-1] for g in grid])

            def f(xp):
                xp = np.asarray(xp, dtype=float)
                inside = np.all((xp >= lo) & (xp <= hi), axis=-1)
                out = interp(np.clip(xp, lo, hi))
                if exterior is not None:
                    out = np.where(inside, out, exterior(xp))
                return out

            dim = 3
        else:
            grid = np.asarray(grid, dtype=float)
            spl = CubicSpline(grid, values)
            lo, hi = grid[0], grid[-1]

            def f(xp):
                xp = np.asarray(xp, dtype=float)
                out = spl(np.clip(xp, lo, hi))
                if exterior is not None:
                    out = np.where((xp >= lo) & (xp <= hi), out, exterior(xp))
                return out

            dim = 2
        if sup_abs is None:
            sup_abs = float(np.abs(values).max())
        return cls(f, dim, sup_abs, tuple(grid) if dim == 2 else None)


_OPS = ("union", "intersection", "difference", "complement")


@dataclass(frozen=True)
class Boolean(Region):
    op: str
    children: tuple

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown boolean op {self.op!r}")
        if self.op == "complement" and len(self.children) != 1:
            raise ValueError("complement takes one child")
        if self.op == "difference" and len(self.children) != 2:
            raise ValueError("difference takes two children")
        if not self.children:
            raise ValueError("boolean region needs children")

    @property
    def dim(self):
        return self.children[0].dim

    def level(self, x):
        lv = [c.level(x) for c in self.children]
        if self.op == "union":
            return np.minimum.reduce(lv)
        if self.op == "intersection":
            return np.maximum.reduce(lv)
        if self.op == "difference":
            return np.maximum(lv[0], -lv[1])
        return -lv[0]

    def radial_breakpoints(self, y):
        return sorted({b for c in self.children for b in c.radial_breakpoints(y)})

    def radial_cuts(self, y):
        return sorted({b for c in self.children for b in c.radial_cuts(y)})

    def far_field(self, y, radius):
        kinds = [c.far_field(y, radius) for c in self.children]
        if self.op == "complement":
            kind, b = kinds[0]
            return {"inside": "outside", "outside": "inside"}.get(kind, kind), b
        ks = [k for k, _ in kinds]
        if self.op == "union":
            if "inside" in ks:
                return "inside", 0.0
            if all(k == "outside" for k in ks):
                return "outside", 0.0
        if self.op == "intersection":
            if "outside" in ks:
                return "outside", 0.0
            if all(k == "inside" for k in ks):
                return "inside", 0.0
        if self.op == "difference":
            if ks[0] == "outside" or ks[1] == "inside":
                return "outside", 0.0
            if ks[0] == "inside" and ks[1] == "outside":
                return "inside", 0.0
        return "unknown", np.inf


@dataclass(frozen=True)
class Empty(Region):
    dim: int = 2

    def level(self, x):
        x = _pts(x, self.dim)
        return np.ones(x.shape[:-1])

    def far_field(self, y, radius):
        return "outside", 0.0


def region_from_config(cfg):
    """Build a region from a declarative dict (see README for the schema)."""
    cfg = dict(cfg)
    kind = cfg.pop("variant")
    if kind == "half_space":
        return HalfSpace(tuple(cfg["normal"]), float(cfg.get("offset", 0.0)))
    if kind == "ball":
        return Ball(tuple(cfg["center"]), float(cfg["radius"]), bool(cfg.get("inside", True)))
    if kind == "empty":
        return Empty(int(cfg["dim"]))
    if kind == "subgraph":
        from .solver import exterior_from_config
        f0 = exterior_from_config(cfg["function"])
        return Subgraph(f0, int(cfg.get("dim", 2)), f0.sup_abs + abs(f0.intercept), far_tail=f0.paired_tail)
    if kind == "boolean":
        return Boolean(cfg["op"], tuple(region_from_config(c) for c in cfg["children"]))
    raise ValueError(f"unknown region variant {kind!r}")
