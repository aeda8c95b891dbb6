import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from fracflat.errors import FitError, GrowthError, PreconditionError
from fracflat.flatness import (dyadic_flatness_report, fit_cylinder, frac_laplacian_graph, growth_check,
                               harnack_dichotomy_check)


def graph(f, lo=-1.0, hi=1.0, m=4001):
    x = np.linspace(lo, hi, m)
    return np.stack([x, f(x)], axis=1)


def rot(th):
    return np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])


class TestFitCylinder:
    def test_plane(self):
        pts = graph(lambda x: 0.3 * x)
        nu, w = fit_cylinder(pts, (0.0, 0.0), 1.0)
        assert w == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(nu, np.array([-0.3, 1.0]) / math.hypot(0.3, 1.0))

    def test_sign_is_canonical(self):
        nu, _ = fit_cylinder(graph(lambda x: -2.0 * x), (0.0, 0.0), 1.0)
        assert nu[np.argmax(np.abs(nu))] > 0

    def test_sine_graph(self):
        # extrema of 0.1 sin(5x) on the in-ball part give half-width <= 0.1
        nu, w = fit_cylinder(graph(lambda x: 0.1 * np.sin(5 * x)), (0.0, 0.0), 1.0)
        assert w <= 0.1
        assert math.acos(min(1.0, abs(nu[1]))) <= 0.2

    @given(st.floats(0, 2 * math.pi), st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=25, deadline=None)
    def test_rigid_motion_invariance(self, th, a, b):
        pts = graph(lambda x: 0.1 * np.sin(5 * x) + 0.05 * x ** 2, m=801)
        _, w = fit_cylinder(pts, (0.0, 0.0), 1.0)
        moved = pts @ rot(th).T + [a, b]
        _, w2 = fit_cylinder(moved, (a, b), 1.0)
        assert w2 == pytest.approx(w, rel=1e-7, abs=1e-12)

    @given(st.floats(0, math.pi))
    @settings(max_examples=30, deadline=None)
    def test_optimal_against_candidates(self, th):
        pts = graph(lambda x: 0.2 * np.cos(3 * x), m=801)
        _, w = fit_cylinder(pts, (0.0, 0.0), 1.0)
        u = np.array([math.cos(th), math.sin(th)])
        proj = pts[np.linalg.norm(pts, axis=1) <= 1.0] @ u
        assert w <= 0.5 * (proj.max() - proj.min()) + 1e-12

    def test_three_dimensional_plane(self):
        rng = np.random.default_rng(1)
        xy = rng.uniform(-0.7, 0.7, (400, 2))
        pts = np.column_stack([xy, 0.2 * xy[:, 0] - 0.1 * xy[:, 1]])
        nu, w = fit_cylinder(pts, (0.0, 0.0, 0.0), 1.0)
        assert w <= 1e-8
        assert abs(nu @ np.array([-0.2, 0.1, 1.0]) / np.linalg.norm([-0.2, 0.1, 1.0])) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(FitError):
            fit_cylinder(np.zeros((5, 2)), (0.0, 0.0), 1.0)
        with pytest.raises(FitError):
            fit_cylinder([[0.0, 0.0]], (0.0, 0.0), 1.0)


class TestDyadic:
    def test_plane_infinite_exponent(self):
        rep = dyadic_flatness_report(graph(lambda x: 0.0 * x), (0.0, 0.0), 4, 0.25)
        assert all(w == 0 for w in rep.widths)
        assert math.isinf(rep.alpha_fit) and rep.to_dict()["alpha_fit"] == "inf"
        assert rep.drift_ok

    def test_cusp_exponent(self):
        # half-width of |x|^1.5 on B_rho is rho^1.5 / 2 up to the tilt, so log2 w drops by 1.5 per scale
        rep = dyadic_flatness_report(graph(lambda x: np.abs(x) ** 1.5, m=20001), (0.0, 0.0), 6, 0.25)
        assert rep.alpha_fit == pytest.approx(0.5, abs=0.1)
        assert all(np.linalg.norm(d) == pytest.approx(1.0) for d in rep.directions)

    def test_widths_attained(self):
        pts = graph(lambda x: 0.1 * np.sin(3 * x))
        rep = dyadic_flatness_report(pts, (0.0, 0.0), 3, 0.25)
        for l, nu, w in zip(rep.scales, rep.directions, rep.widths):
            p = pts[np.linalg.norm(pts, axis=1) <= 2.0 ** -l] @ np.array(nu)
            assert w == pytest.approx(0.5 * (p.max() - p.min()), rel=1e-12) and w >= 0

    def test_undersampled_scale_omitted(self):
        pts = graph(lambda x: 0.1 * x ** 2, m=81)
        with pytest.warns(UserWarning, match="omitted"):
            rep = dyadic_flatness_report(pts, (0.0, 0.0), 5, 0.25)
        assert rep.omitted and max(rep.scales) < min(rep.omitted)

    def test_more_points_never_thinner(self):
        f = lambda x: 0.1 * np.sin(7 * x) + 0.05 * x
        coarse = dyadic_flatness_report(graph(f, m=401), (0.0, 0.0), 2, 0.25)
        fine = dyadic_flatness_report(np.vstack([graph(f, m=401), graph(f, m=1601)]), (0.0, 0.0), 2, 0.25)
        assert all(b >= a - 1e-15 for a, b in zip(coarse.widths, fine.widths))

    def test_write(self, tmp_path):
        rep = dyadic_flatness_report(graph(lambda x: 0.1 * x ** 2), (0.0, 0.0), 3, 0.25)
        rep.write(tmp_path / "f.json", tmp_path / "f.csv")
        assert (tmp_path / "f.csv").read_text().splitlines()[0] == "l,w_l,nu_0,nu_1,drift"


class TestDichotomy:
    r, k, alpha = 1.0, 2, 0.25

    def _amp(self):
        return self.r * 2.0 ** (-self.k * (1 + self.alpha))

    def test_constant_below(self):
        pts = graph(lambda x: -0.9 * self._amp() + 0 * x)
        # delta close to 1 so that the ball of radius r 2^-k delta reaches the graph
        out = harnack_dichotomy_check(pts, 0.95, self.k, self.alpha, self.r)
        assert out.branch == "upper" and not out.both_hold and out.witness

    def test_flat_both(self):
        out = harnack_dichotomy_check(graph(lambda x: 0 * x), 0.5, self.k, self.alpha, self.r)
        assert out.branch == "upper" and out.both_hold

    @pytest.mark.parametrize("delta", [0.3, 0.5, 0.8, 0.95])
    def test_oscillation_against_extrema(self, delta):
        # y = a sin(x / (delta rho)) rises on |x| <= delta rho, so its extremes inside the disc of radius
        # delta rho sit where the graph meets the circle
        a, rho = self._amp(), self.r * 2.0 ** -self.k
        R = delta * rho
        f = lambda x: a * np.sin(x / R)
        x_star = optimize.brentq(lambda x: x ** 2 + f(x) ** 2 - R ** 2, 0, R, xtol=1e-15)
        level = a * (1 - delta ** 2)
        expect_neither = f(x_star) > level
        pts = graph(f, m=400001)
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            out = harnack_dichotomy_check(pts, delta, self.k, self.alpha, self.r)
        assert (out.branch == "neither") == expect_neither
        if expect_neither:
            hi, lo = out.witness
            assert hi[1] == pytest.approx(f(x_star), rel=1e-4)
            assert lo[1] == pytest.approx(-f(x_star), rel=1e-4)
        else:
            assert out.branch == "upper" and out.both_hold

    def test_neither_warns(self):
        a, rho = self._amp(), self.r * 2.0 ** -self.k
        pts = graph(lambda x: a * np.sin(x / (0.8 * rho)), m=40001)
        with pytest.warns(UserWarning, match="fails"):
            harnack_dichotomy_check(pts, 0.8, self.k, self.alpha, self.r)

    def test_precondition_names_scale(self):
        # inside the l = 0 band (height 1) but not the l = 1 band (height 2^-1.25 < 0.45)
        pts = graph(lambda x: 0.45 + 0 * x)
        with pytest.raises(PreconditionError, match="l=1"):
            harnack_dichotomy_check(pts, 0.5, self.k, self.alpha, self.r)

    def test_tilted_frame(self):
        nu = np.array([-0.1, 1.0]) / math.hypot(0.1, 1.0)
        pts = graph(lambda x: 0.1 * x)
        out = harnack_dichotomy_check(pts, 0.5, 1, 0.25, 1.0, normals=[nu, nu])
        assert out.both_hold


class TestGrowth:
    def test_zero(self):
        assert growth_check(lambda x: 0 * x, 0.5, 1e-6)

    def test_quadratic_fails(self):
        assert not growth_check(lambda x: x ** 2, 0.5, 10.0)

    def test_subcritical_power(self):
        assert growth_check(lambda x: x * np.abs(x) ** 0.3, 0.5, 1.0)


class TestLimitOperator:
    s = 0.5
    order = (1 + s) / 2

    def test_linear_annihilated(self):
        rng = np.random.default_rng(7)
        for a, b, x in rng.uniform(-3, 3, (10, 3)):
            v = frac_laplacian_graph(lambda z: a * z + b, self.order, x, growth=(0.2, abs(a) + abs(b) + 1))
            assert abs(v) <= 1e-6

    def test_linear_annihilated_plane(self):
        v = frac_laplacian_graph(lambda z: z @ np.array([0.4, -1.1]) + 0.2, self.order, [0.3, 0.1], R=1.0, dim=2)
        assert abs(v) <= 1e-6

    def test_quadratic_golden(self):
        # pairing sum 2 z^2 against z^{-2.5} on (0, 1)
        oracle = integrate.quad(lambda z: 2 * z ** 2 * z ** (-2 - self.s), 0, 1)[0]
        v = frac_laplacian_graph(lambda z: z ** 2, self.order, 0.0, R=1.0)
        assert oracle == pytest.approx(4.0, rel=1e-10)
        assert v == pytest.approx(4.0, rel=1e-9)

    def test_even_function_twice_one_sided(self):
        f = lambda z: np.cos(2 * z)
        one = integrate.quad(lambda z: (f(z) - 1) * z ** (-2 - self.s), 0, 1, limit=200)[0]
        assert frac_laplacian_graph(f, self.order, 0.0, R=1.0) == pytest.approx(2 * one, rel=1e-8)

    @given(st.floats(-2, 2), st.floats(-2, 2))
    @settings(max_examples=20, deadline=None)
    def test_linearity(self, a, b):
        f, g = (lambda z: np.sin(z)), (lambda z: np.abs(z) ** 1.2)
        lhs = frac_laplacian_graph(lambda z: a * f(z) + b * g(z), self.order, 0.3, R=2.0)
        rhs = a * frac_laplacian_graph(f, self.order, 0.3, R=2.0) + b * frac_laplacian_graph(g, self.order, 0.3,
                                                                                            R=2.0)
        assert lhs == pytest.approx(rhs, rel=1e-7, abs=1e-7)

    def test_growth_rejected(self):
        with pytest.raises(GrowthError):
            frac_laplacian_graph(lambda z: z ** 2, self.order, 0.0, growth=(0.2, 1.0))
        with pytest.raises(GrowthError):
            frac_laplacian_graph(lambda z: 0 * z, self.order, 0.0, growth=(0.6, 1.0))
        with pytest.raises(GrowthError):
            frac_laplacian_graph(lambda z: z, self.order, 0.0)

    def test_tail_budget(self):
        v, budget = frac_laplacian_graph(lambda z: np.sin(z), self.order, 0.4, growth=(0.0, 1.0),
                                         return_budget=True)
        assert budget <= 1e-10 and math.isfinite(v)
