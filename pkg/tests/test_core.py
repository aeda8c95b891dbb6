import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracflat.errors import AdmissibilityError, ChartEvaluationError, GeometryError, InvalidMetricError
from fracflat.geometry import ChartSpec, Cylinder, check_flatness_assumption, cylinder_contains
from fracflat.metric import (FractionalOrder, check_admissible, constant_metric, diagonal_sinusoidal, euclidean,
                             metric_from_config, metric_norm, require_admissible, verification_grid)
from fracflat.region import Ball, Boolean, Empty, HalfSpace, Subgraph, region_from_config

finite = st.floats(-10, 10, allow_nan=False)


class TestMetricNorm:
    def test_euclidean(self):
        assert metric_norm(np.eye(2), [3, 4]) == pytest.approx(5.0)

    def test_scaled_line(self):
        assert metric_norm([[4.0]], [1.0]) == pytest.approx(2.0)

    def test_diagonal(self):
        assert metric_norm(np.diag([2.0, 0.5]), [1, 0]) == pytest.approx(np.sqrt(2))

    @pytest.mark.parametrize("g", [[[1, 2], [2, 1]], [[1, 0.5], [0, 1]], [[np.nan, 0], [0, 1]], [[0.0]]])
    def test_rejects_non_spd(self, g):
        with pytest.raises(InvalidMetricError):
            metric_norm(g, np.ones(len(g)))

    @given(st.lists(finite, min_size=2, max_size=2), finite)
    def test_homogeneous(self, v, lam):
        g = np.array([[1.3, 0.2], [0.2, 0.8]])
        assert metric_norm(g, lam * np.array(v)) == pytest.approx(abs(lam) * metric_norm(g, v), rel=1e-9,
                                                                   abs=1e-9)

    @given(st.lists(finite, min_size=6, max_size=6))
    def test_triangle_inequality(self, xs):
        g = np.array([[1.3, 0.2], [0.2, 0.8]])
        a, b = np.array(xs[:2]), np.array(xs[2:4])
        assert metric_norm(g, a + b) <= metric_norm(g, a) + metric_norm(g, b) + 1e-9


def test_fractional_order_bounds():
    FractionalOrder(0.5, 0.2)
    for s, a in ((0.0, None), (1.0, None), (0.5, 0.6), (0.5, 0.0)):
        with pytest.raises(ValueError):
            FractionalOrder(s, a)


class TestAdmissibility:
    def test_identity(self):
        rep = check_admissible(euclidean(2), 1.0)
        assert rep.passed
        assert rep.worst_ellipticity == pytest.approx((1.0, 1.0))

    def test_too_large(self):
        rep = check_admissible(constant_metric(3 * np.eye(2)), 1.0)
        assert not rep.passed
        with pytest.raises(AdmissibilityError):
            require_admissible(constant_metric(3 * np.eye(2)), 1.0)

    def test_sinusoidal_lipschitz(self):
        # d/dx (1 + 0.4 sin x) = 0.4 cos x, maximal at x = 0 which is on the grid
        m = diagonal_sinusoidal(1, 0.4)
        rep = check_admissible(m, 1.0)
        assert rep.passed
        assert rep.worst_lipschitz == pytest.approx(0.4, rel=1e-12)

    def test_grad_bound_dominates_finite_differences(self):
        m = diagonal_sinusoidal(2, [0.3, 0.2], scale=0.7)
        pts, _ = verification_grid(2, 1.0, 1 / 16)
        eps = 1e-6
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            fd = (m.eval(pts + e) - m.eval(pts - e)) / (2 * eps)
            assert np.abs(fd).max() <= m.grad_bound + 1e-6

    def test_empty_grid(self):
        with pytest.raises(AdmissibilityError):
            check_admissible(euclidean(1), 1.0, grid=np.empty((0, 1)))

    @given(st.floats(1e-3, 1.0))
    @settings(max_examples=20)
    def test_identity_every_radius(self, r):
        assert check_admissible(euclidean(1), r).passed

    def test_rescaled_gradient(self):
        m = diagonal_sinusoidal(1, 0.4).rescaled(0.25)
        assert m.grad_bound == pytest.approx(1.6)
        assert check_admissible(m, 0.25).worst_lipschitz == pytest.approx(0.4, rel=1e-9)

    def test_config(self):
        m = metric_from_config({"family": "diagonal_sinusoidal", "dim": 1, "amplitude": 0.4})
        assert m.at([np.pi / 2])[0, 0] == pytest.approx(1.4)
        with pytest.raises(InvalidMetricError):
            metric_from_config({"family": "nope"})


class TestChart:
    def test_identity(self):
        chart = ChartSpec(lambda x: x, 1.0, 2)
        assert check_flatness_assumption(chart, 1.0)

    def test_scaled_target(self):
        chart = ChartSpec(lambda x: x, 1.0, 2, target_metric=constant_metric(1.02 * np.eye(2)))
        assert not check_flatness_assumption(chart, 1.0)

    def test_cubic_perturbation_matches_jacobian_oracle(self):
        # Dphi = (1 + c|x|^2) I + 2c x x^T; compare the verdict with the grid maximum of |Dphi^T Dphi - I|
        c = 1e-3
        chart = ChartSpec(lambda x: x + c * x * np.sum(x ** 2, axis=-1, keepdims=True), 1.0, 2)
        ok, det = check_flatness_assumption(chart, 1.0, return_details=True)
        pts, _ = verification_grid(2, 1.0)
        r2 = np.sum(pts ** 2, axis=1)
        J = (1 + c * r2)[:, None, None] * np.eye(2) + 2 * c * pts[:, :, None] * pts[:, None, :]
        dev = np.abs(np.linalg.eigvalsh(np.einsum("mki,mkj->mij", J, J) - np.eye(2))).max()
        assert det["sup_deviation"] == pytest.approx(dev, rel=1e-5)
        assert ok == (dev <= 0.01 and det["scaled_derivative"] <= 0.01)

    def test_bad_point_named(self):
        chart = ChartSpec(lambda x: np.where(x > 0.5, np.nan, x), 1.0, 1)
        with pytest.raises(ChartEvaluationError):
            check_flatness_assumption(chart, 1.0)

    def test_radius_beyond_domain(self):
        with pytest.raises(GeometryError):
            check_flatness_assumption(ChartSpec(lambda x: x, 0.5, 1), 1.0)


class TestCylinder:
    def test_flat_points(self):
        pts = np.stack([np.linspace(-1, 1, 50), np.zeros(50)], axis=1)
        assert cylinder_contains(pts, Cylinder((0, 0), (0, 1), 1.0, 0.0))

    def test_high_point(self):
        assert not cylinder_contains([[0.0, 0.3]], Cylinder((0, 0), (0, 1), 1.0, 0.2))

    def test_sine_graph(self):
        x = np.linspace(-1, 1, 2001)
        pts = np.stack([x, 0.1 * np.sin(5 * x)], axis=1)
        assert cylinder_contains(pts, Cylinder((0, 0), (0, 1), 1.0, 0.1))

    def test_direction_must_be_unit(self):
        with pytest.raises(GeometryError):
            Cylinder((0, 0), (0, 2), 1.0, 0.1)

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=50)
    def test_monotone_in_width(self, w, extra):
        x = np.linspace(-1, 1, 101)
        pts = np.stack([x, 0.3 * np.cos(3 * x)], axis=1)
        if cylinder_contains(pts, Cylinder((0, 0), (0, 1), 1.0, w)):
            assert cylinder_contains(pts, Cylinder((0, 0), (0, 1), 1.0, w + extra))


class TestRegions:
    @pytest.mark.parametrize("region", [HalfSpace((0.0, 1.0)), Ball((0.0, 0.0), 1.0),
                                        Subgraph(lambda x: 0.2 * np.sin(x)),
                                        Boolean("union", (Ball((0.0, 0.0), 1.0), Ball((2.0, 0.0), 0.5)))])
    def test_signed_indicator_is_unit_off_boundary(self, region):
        pts = np.random.default_rng(0).uniform(-3, 3, (500, 2))
        lv = region.level(pts)
        ind = region.signed_indicator(pts[lv != 0])
        assert set(np.unique(ind)) <= {-1.0, 1.0}
        assert np.all(ind == np.where(region.contains(pts[lv != 0]), 1.0, -1.0))

    def test_subgraph_boundary(self):
        f = lambda x: 0.3 * np.cos(x)
        sg = Subgraph(f)
        x = np.linspace(-2, 2, 9)
        assert np.allclose(sg.level(np.stack([x, f(x)], axis=1)), 0)
        assert np.all(sg.contains(np.stack([x, f(x) - 0.1], axis=1)))

    def test_complement_and_empty(self):
        b = Ball((0.0, 0.0), 1.0)
        p = np.array([[0.2, 0.1], [3.0, 0.0]])
        assert np.all(b.complement().signed_indicator(p) == -b.signed_indicator(p))
        assert np.all(Empty(2).signed_indicator(p) == -1)

    def test_from_config(self):
        r = region_from_config({"variant": "ball", "center": [0, 0], "radius": 2.0})
        assert isinstance(r, Ball) and r.radius == 2.0
        sub = region_from_config({"variant": "subgraph", "function": {"family": "linear", "slope": 0.5}})
        assert sub.contains(np.array([[2.0, 0.9]]))[0]
        with pytest.raises(ValueError):
            region_from_config({"variant": "torus"})
