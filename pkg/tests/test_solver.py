import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatlab.grid import Box, GridSpec
from heatlab.kernel import heat_kernel, heat_potential
from heatlab.measures import Measure
from heatlab.potentials import BoundedBump, TimePower, level_truncate, zero
from heatlab.solver import (FREE_FLOOR, MonotonicityError, SolverError, StepControl, bounded_domain_estimate,
                            comparison_violation, duhamel_residual, kernel_estimate, mass_balance, pre_damping,
                            reduce, snapshot_times, solve_exhaustion, solve_level_truncation,
                            solve_time_truncation, step_solve, weighted_estimate)

V_HALF = TimePower(1.0, 0.5)
V_CT = TimePower(0.5, 1.0)
BUMP = BoundedBump(1.0, Box((-0.5,), (0.5,)))
D0 = Measure.dirac(0.0)
GRID = GridSpec.default()


def _solve(V, grid=GRID, mu=D0, per_octave=4):
    return step_solve(V, grid, mu, grid.t_min, grid.T, times=snapshot_times(grid, grid.t_min, grid.T, per_octave),
                      damping=pre_damping(V, grid.t_min))


def _rel_max(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


class TestFreeEvolution:
    def test_free_kernel_1d(self):
        u = step_solve(zero(1), GRID, D0, 0.05, 1.0, times=[1.0])
        assert _rel_max(u.values[-1], heat_kernel(GRID.nodes(), 1.0)) <= 0.01

    def test_free_kernel_2d(self):
        g = GridSpec.default(dim=2, half_width=6.0, h=0.1, t_min=0.05)
        u = step_solve(zero(2), g, Measure.dirac([0.0, 0.0]), 0.05, 1.0, times=[1.0])
        assert _rel_max(u.values[-1], heat_kernel(g.nodes(), 1.0)) <= 0.01

    def test_off_centre_atoms(self):
        mu = Measure.from_atoms([(-1.0, 0.5), (1.5, 2.0)], 1)
        u = step_solve(zero(1), GRID, mu, 0.05, 1.0, times=[0.5, 1.0])
        for t in (0.5, 1.0):
            assert _rel_max(u.values[u.index(t)], heat_potential(mu, GRID.nodes(), t)) <= 0.01

    def test_separable_singular_solution(self):
        # t^-c H[delta_0] solves u_t - u_xx + (c/t) u = 0
        t0 = 0.05
        u = step_solve(V_CT, GRID, D0, t0, 1.0, times=[0.3, 1.0], damping=t0 ** -0.5)
        for t in (0.3, 1.0):
            exact = t ** -0.5 * heat_kernel(GRID.nodes(), t)
            assert _rel_max(u.values[u.index(t)], exact) <= 0.01


class TestMassBalance:
    @pytest.mark.parametrize("V", [BUMP, V_HALF, level_truncate(V_CT, 100.0)], ids=["bump", "half", "ct_k100"])
    def test_balance_is_exact(self, V):
        u = _solve(V)
        m = mass_balance(u, V, D0)
        assert np.max(np.abs(m - m[0])) <= 1e-12

    def test_pre_damping(self):
        assert pre_damping(V_HALF, 0.01) == pytest.approx(np.exp(-0.2), rel=1e-12)
        assert pre_damping(V_CT, 0.01) == 0.0
        assert pre_damping(BUMP, 0.01) == 1.0


class TestPositivity:
    @settings(max_examples=10, deadline=None)
    @given(st.floats(0.0, 20.0), st.floats(-1.0, 1.0), st.floats(0.1, 3.0))
    def test_nonnegative_and_below_free(self, amp, x0, w):
        g = GridSpec.default(half_width=4.0, h=0.05, t_min=0.02, T=0.5)
        V = BoundedBump(amp, Box((-0.5,), (0.5,)))
        mu = Measure.from_atoms([(x0, w)], 1)
        u = step_solve(V, g, mu, g.t_min, g.T, times=[0.1, 0.5])
        assert u.values.min() >= 0
        assert comparison_violation(u, mu) <= 1


class TestLevelLaw:
    def test_absorption_factor_and_exponent(self):
        c, t = 0.5, 0.2
        got = []
        for k in (10.0, 100.0, 1000.0):
            Vk = level_truncate(V_CT, k)
            u = step_solve(Vk, GRID, D0, GRID.t_min, 1.0, times=[t], damping=pre_damping(Vk, GRID.t_min))
            got.append(u.sample([[0.0]], t)[0] / heat_kernel(np.zeros((1, 1)), t)[0])
            assert got[-1] == pytest.approx(np.exp(-c) * (k * t / c) ** -c, rel=0.02)
        slope = np.polyfit(np.log([10.0, 100.0, 1000.0]), np.log(got), 1)[0]
        assert slope == pytest.approx(-c, rel=0.1)


class TestSweeps:
    def test_level_truncation_decreases(self):
        sw = solve_level_truncation(V_CT, D0, [1e1, 1e2, 1e3], GRID)
        assert sw.max_violation <= 1
        assert np.all(sw.members[0].values >= sw.members[-1].values - 1e-12)

    def test_time_truncation_decreases(self):
        sw = solve_time_truncation(V_HALF, D0, [0.5, 0.1, 0.02], GRID)
        assert sw.max_violation <= 1

    def test_exhaustion_increases(self):
        sw = solve_exhaustion(BUMP, D0, [1.0, 2.0, 4.0], GRID)
        assert sw.max_violation <= 1
        assert sw.params == [1.0, 2.0, 4.0]

    def test_exhaustion_outside_support_starts_at_zero(self):
        sw = solve_exhaustion(BUMP, Measure.dirac(1.5), [1.0, 2.0], GRID)
        assert np.all(sw.members[0].values == 0)

    @pytest.mark.parametrize("fn,arg", [(solve_level_truncation, [1e3, 1e2]),
                                        (solve_time_truncation, [0.1, 0.5]),
                                        (solve_exhaustion, [2.0, 1.0])])
    def test_parameter_order_enforced(self, fn, arg):
        with pytest.raises(ValueError):
            fn(BUMP, D0, arg, GRID)

    def test_violation_is_reported(self, monkeypatch):
        # a "truncation" whose potential shrinks as k grows reverses the ordering
        import heatlab.solver as solver
        monkeypatch.setattr(solver, "level_truncate", lambda V, k: BoundedBump(1e3 / k, Box((-0.5,), (0.5,))))
        with pytest.raises(MonotonicityError):
            solve_level_truncation(BUMP, D0, [1.0, 10.0], GRID)


class TestComparison:
    @pytest.mark.parametrize("V", [V_HALF, BUMP, level_truncate(V_CT, 1e3)], ids=["half", "bump", "ct"])
    def test_below_heat_potential(self, V):
        assert comparison_violation(_solve(V), D0) <= 1


class TestReduce:
    def test_dirac_is_killed_by_c_over_t(self):
        r = reduce(V_CT, D0, GRID)
        assert r.m_star == pytest.approx(0.0, abs=0.02)
        assert r.verdict == "ok"

    def test_dirac_survives_time_power_half(self):
        r = reduce(V_HALF, D0, GRID)
        assert r.m_star == pytest.approx(1.0, abs=0.02)
        assert r.drift <= 0.02
        assert len(r.probe_times) == 3

    def test_zero_measure(self):
        assert reduce(V_HALF, Measure.zero(1), GRID).m_star == 0.0


class TestDuhamel:
    def test_free(self):
        u = _solve(zero(1))
        assert duhamel_residual(u, zero(1), D0) <= 1e-3
        # wrong mass: |H - 2H| / 2H
        assert duhamel_residual(u, zero(1), Measure.dirac(0.0, 2.0)) == pytest.approx(0.5, abs=0.02)

    def test_time_power_half(self):
        u = _solve(V_HALF)
        assert duhamel_residual(u, V_HALF, D0) <= 0.01
        assert duhamel_residual(u, V_HALF, Measure.from_atoms([(0.0, 2.0)], 1)) >= 0.4

    def test_bump(self):
        # absorption before t_min is not carried for x-dependent V: about int_0^t_min H V
        assert duhamel_residual(_solve(BUMP), BUMP, D0) <= 0.05


class TestEstimates:
    @pytest.mark.parametrize("V", [V_HALF, BUMP], ids=["half", "bump"])
    def test_weighted_estimate(self, V):
        rep = weighted_estimate(_solve(V), V, D0)
        assert rep.rhs == pytest.approx(1.0)
        assert rep.lhs <= 1.02 * rep.rhs

    def test_weighted_estimate_free_closed_form(self):
        # V = 0, delta_0: int H(x,t) e^{-x^2/4(T-t)} dx = sqrt((T-t)/T), so lhs = (1/2T) int_0^T sqrt((T-t)/T) = 1/3
        u = step_solve(zero(1), GRID, D0, GRID.t_min, 1.0,
                       times=snapshot_times(GRID, GRID.t_min, 1.0, 4, end_refine=10))
        rep = weighted_estimate(u, zero(1), D0)
        assert rep.lhs == pytest.approx(1 / 3, rel=0.01)

    @pytest.mark.parametrize("V", [V_HALF, BUMP], ids=["half", "bump"])
    def test_bounded_domain(self, V):
        g = GridSpec.default(half_width=1.0)
        rep = bounded_domain_estimate(V, D0, g)
        assert rep["rhs"] == pytest.approx(1.0)
        assert 0 < rep["lhs"] <= rep["rhs"]
        assert bounded_domain_estimate(V, D0, g.refined(2))["constant"] == pytest.approx(rep["constant"], rel=0.01)


class TestKernelEstimate:
    def test_free(self):
        assert kernel_estimate(zero(1), [0.3], GRID, 0.1).max_ratio == pytest.approx(1.0, abs=0.01)

    def test_c_over_t_kills_the_kernel(self):
        assert kernel_estimate(V_CT, [0.0], GRID, 0.1).max_ratio <= 0.01

    def test_bump_bracket(self):
        ke = kernel_estimate(BUMP, [0.3], GRID, 0.1)
        nodes = GRID.nodes()
        for t, v in zip(ke.field.times, ke.field.values):
            H = heat_kernel(nodes - 0.3, t)
            band = 0.01 * H + FREE_FLOOR * H.max()
            assert np.all(v <= H + band)
            assert np.all(v >= np.exp(-1.0 * (t - 0.01)) * H - band)

    def test_sigma_must_be_resolved(self):
        with pytest.raises(ValueError):
            kernel_estimate(zero(1), [0.0], GRID, 0.01)


class TestErrors:
    def test_stiff_potential_rejected(self):
        with pytest.raises(SolverError):
            step_solve(BoundedBump(1e9, Box((-0.5,), (0.5,))), GRID, D0, GRID.t_min, 1.0,
                       control=StepControl(stiff_limit=1.0, max_pieces=2))

    def test_interval_and_dimension(self):
        with pytest.raises(ValueError):
            step_solve(zero(1), GRID, D0, 0.5, 0.1)
        with pytest.raises(ValueError):
            step_solve(zero(2), GRID, D0, 0.1, 1.0)
