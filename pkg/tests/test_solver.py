import json
import math

import numpy as np
import pytest
from scipy import integrate

from fracflat.errors import ConfigError, GeometryError
from fracflat.kernel import cns
from fracflat.nmc import graph_nmc
from fracflat.solver import (ExteriorData, exterior_from_config, flow_step, initial_state, nmc_graph_operator,
                             solve_minimal_graph, stability_cap, write_solution)

S = 0.5
SINE = {"family": "sinusoidal", "amplitude": 0.05, "frequency": 2.0}


class TestExterior:
    def test_families(self):
        ext = exterior_from_config(SINE)
        assert ext(np.pi / 4) == pytest.approx(0.05) and ext.sup_abs == 0.05
        assert exterior_from_config({"family": "linear", "slope": 2.0, "intercept": 1.0})(1.5) == 4.0
        with pytest.raises(ConfigError):
            exterior_from_config({"family": "sinusoidal", "amplitude": 0.1})
        with pytest.raises(ConfigError):
            exterior_from_config({"family": "spline"})

    @pytest.mark.parametrize("cfg", [SINE, {"family": "cosine", "amplitude": 0.1, "frequency": 3.0, "phase": 0.4},
                                     {"family": "linear", "slope": 0.3, "intercept": -0.2}])
    def test_paired_tail_by_direct_sum(self, cfg):
        ext = exterior_from_config(cfg)
        a, T = 0.3, 2.0
        # Simpson on a fine grid, linear part continued exactly past the cutoff
        t = np.linspace(T, 4000.0, 4_000_001)
        vals = t ** (-2 - S) * (ext(a + t) + ext(a - t))
        direct = integrate.simpson(vals, x=t) + 2 * (ext.slope * a + ext.intercept) * 4000.0 ** (-1 - S) / (1 + S)
        assert ext.paired_tail(a, T, S) == pytest.approx(direct, abs=1e-8)


class TestOperator:
    def test_flat_is_zero(self):
        st = initial_state(ExteriorData("zero", {}), S, h=1 / 16)
        assert np.all(st.H == 0) and st.residual == 0

    def test_linear_is_zero(self):
        st = initial_state(exterior_from_config({"family": "linear", "slope": 0.4, "intercept": 0.1}), S, h=1 / 16)
        # what remains is column quadrature error, growing with the slope
        assert st.residual <= 1e-6

    def test_cosine_linearization(self):
        # closed-form symbol of |xi|^{1+s} at xi = 1
        eps = 1e-4
        kappa = -2 * math.gamma(-1 - S) * math.cos(math.pi * (1 + S) / 2)
        ext = exterior_from_config({"family": "cosine", "amplitude": eps, "frequency": 1.0})
        st = initial_state(ext, S, h=1 / 16)
        x = st.x[st.interior]
        lin = -eps * 2 * cns(2, S) * kappa * np.cos(x)
        # the spline interpolant of the cosine carries an O(h^4) error
        assert np.abs(st.H - lin).max() <= 2e-3 * np.abs(lin).max()

    def test_rejects_exterior_point(self):
        st = initial_state(ExteriorData("zero", {}), S, h=1 / 8)
        with pytest.raises(GeometryError):
            nmc_graph_operator(st, [1.0])


class TestFlow:
    def test_fixed_points(self):
        for ext in (ExteriorData("zero", {}), exterior_from_config({"family": "linear", "slope": -0.3})):
            st = initial_state(ext, S, h=1 / 16)
            new, _ = flow_step(st, stability_cap(S, 1 / 16))
            assert np.abs(new.f - st.f).max() <= 1e-10

    def test_step_lowers_bump_and_keeps_collar(self):
        ext = ExteriorData("zero", {})
        st = initial_state(ext, S, h=1 / 16, initial=lambda x: 0.05 * np.cos(np.pi * x / 2))
        new, tau = flow_step(st, stability_cap(S, 1 / 16))
        assert new.residual <= st.residual
        assert np.all(new.f[~st.interior] == st.f[~st.interior])
        assert new.f[np.argmin(np.abs(st.x))] < st.f[np.argmin(np.abs(st.x))]

    def test_monotone_residual(self):
        st, rep = solve_minimal_graph(ExteriorData("zero", {}), S, tol=1e-3, h=1 / 16,
                                      initial=lambda x: 0.05 * np.cos(np.pi * x / 2))
        res = np.array([r[1] for r in rep.history])
        assert rep.converged and np.all(np.diff(res) <= 0)
        assert np.abs(st.f).max() <= 0.05 * 0.2

    def test_cap_scales(self):
        assert stability_cap(S, 1 / 32) / stability_cap(S, 1 / 64) == pytest.approx(2 ** (1 + S))


class TestSolve:
    def test_zero_data(self):
        st, rep = solve_minimal_graph({"family": "zero"}, S, h=1 / 16)
        assert rep.converged and rep.iterations == 0 and np.all(st.f == 0)

    def test_linear_data(self):
        ext = exterior_from_config({"family": "linear", "slope": 0.25, "intercept": -0.1})
        st, rep = solve_minimal_graph(ext, S, h=1 / 16)
        assert rep.converged
        assert np.allclose(st.f, ext(st.x), atol=1e-12)

    def test_comparison_three_pairs(self):
        lower_cos = ExteriorData("cosine", {"amplitude": 0.03, "frequency": 2.0}, intercept=-0.03)
        zero = ExteriorData("zero", {})
        sine = ExteriorData("sinusoidal", {"amplitude": 0.05, "frequency": 2.0})
        raised = ExteriorData("sinusoidal", {"amplitude": 0.05, "frequency": 2.0}, intercept=0.06)
        sol = {}
        for name, ext in {"cos": lower_cos, "zero": zero, "sine": sine, "raised": raised}.items():
            sol[name] = solve_minimal_graph(ext, S, h=1 / 16)
            assert sol[name][1].converged
        for lo, hi in (("cos", "zero"), ("zero", "raised"), ("sine", "raised")):
            f, g = sol[lo][0], sol[hi][0]
            xg = f.x[f.interior]
            assert np.all(f.function()(xg) <= g.function()(xg) + 1e-6)

    @pytest.mark.slow
    def test_sine_golden(self):
        st, rep = solve_minimal_graph(SINE, S, tol=1e-3, h=1 / 32)
        assert rep.converged and rep.residual <= 1e-3
        i = np.searchsorted(st.x, [-0.5, 0.0, 0.5])
        assert st.f[i] == pytest.approx([-1.60265780e-02, 0.0, 1.60265780e-02], abs=1e-9)
        # odd data give an odd solution
        assert np.allclose(st.f, -st.f[::-1], atol=1e-9)

    def test_bad_order(self):
        with pytest.raises(ConfigError):
            solve_minimal_graph(SINE, 1.0)

    def test_nonconvergence_reported(self):
        st, rep = solve_minimal_graph(SINE, S, tol=1e-12, max_iters=3, h=1 / 16)
        assert not rep.converged and rep.iterations == 3 and st.iteration == 3 and rep.stalled is None

    def test_underflow_reported_not_raised(self):
        # on the coarsest grid the worst node sits next to the fixed collar and the sup residual stalls
        st, rep = solve_minimal_graph(SINE, S, tol=1e-3, h=1 / 8, max_iters=200)
        assert not rep.converged
        assert rep.stalled is not None and "underflow" in rep.stalled["message"] and rep.stalled["trace"]

    def test_write_solution(self, tmp_path):
        st, rep = solve_minimal_graph(SINE, S, tol=1e-2, h=1 / 16, max_iters=20)
        write_solution(st, rep, tmp_path / "s.csv", tmp_path / "s.json")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "x,f,H" and len(lines) == len(st.x) + 1
        assert lines[1].endswith(",nan")
        log = json.loads((tmp_path / "s.json").read_text())
        assert log["converged"] == rep.converged and log["settings"]["s"] == S


def test_graph_route_matches_operator():
    st = initial_state(exterior_from_config(SINE), S, h=1 / 16)
    x = st.x[st.interior][::4]
    direct = graph_nmc(st.function(), x, S, sup_abs=st.sup_deviation(), far_tail=st.exterior.paired_tail,
                       knots=st.x)
    assert direct == pytest.approx(nmc_graph_operator(st, x), abs=1e-12)
