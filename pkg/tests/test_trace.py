import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatlab.grid import Box, GridSpec
from heatlab.measures import Measure
from heatlab.potentials import BoundedBump, TimePower, zero
from heatlab.solver import pre_damping, snapshot_times, step_solve
from heatlab.trace import (_aitken, cell_weights, harnack_audit, initial_trace, representation_check,
                           sweep_trace, trace_lower_bound_check)

V_HALF = TimePower(1.0, 0.5)
V_CT = TimePower(0.5, 1.0)
D0 = Measure.dirac(0.0)
TWO = Measure.from_atoms([(0.0, 0.7), (1.0, 0.4)], 1)
FINE = GridSpec.default(h=0.01, t_min=2.0 ** -10)


def _solve(V, mu, grid=FINE, damping=None):
    damping = pre_damping(V, grid.t_min) if damping is None else damping
    return step_solve(V, grid, mu, grid.t_min, grid.T, times=snapshot_times(grid, grid.t_min, grid.T, 4),
                      damping=damping)


@pytest.fixture(scope="module")
def u_half():
    return _solve(V_HALF, D0)


@pytest.fixture(scope="module")
def u_ct():
    # separable solution t^-c H[delta_0], exact from t_min on
    return _solve(V_CT, D0, damping=FINE.t_min ** -0.5)


class TestCellWeights:
    @settings(max_examples=30)
    @given(st.floats(-3.0, 0.0), st.floats(0.0, 3.0), st.floats(0.0, 1.0))
    def test_split_is_additive(self, lo, hi, frac):
        g = GridSpec.default(half_width=4.0, h=0.05)
        mid = lo + frac * (hi - lo)
        whole = cell_weights(g, Box((lo,), (hi,)))
        parts = cell_weights(g, Box((lo,), (mid,))) + cell_weights(g, Box((mid,), (hi,)))
        assert np.allclose(whole, parts, atol=1e-12)
        assert whole.sum() == pytest.approx(hi - lo, abs=1e-12)

    def test_two_dimensional_volume(self):
        g = GridSpec.default(dim=2, half_width=2.0, h=0.1)
        assert cell_weights(g, Box((-0.33, 0.1), (0.5, 0.77))).sum() == pytest.approx(0.83 * 0.67)


class TestAitken:
    @given(st.floats(0.1, 10.0), st.floats(0.01, 5.0), st.floats(0.1, 0.9))
    def test_geometric_sequences_are_exact(self, a, b, q):
        m = a - b * q ** np.arange(6)
        assert _aitken(m) == pytest.approx(a, rel=1e-8)

    def test_nonmonotone_falls_back_to_last(self):
        assert _aitken(np.array([1.0, 2.0, 1.5])) == 1.5

    def test_clipped_at_zero(self):
        assert _aitken(np.array([0.3, 0.1, 0.01])) >= 0.0


class TestInitialTrace:
    def test_unit_atom_under_time_power_half(self, u_half):
        tr = initial_trace(u_half, V_HALF)
        assert tr.cell_at([0.0]).mass == pytest.approx(1.0, abs=0.02)
        assert tr.singular == []
        assert not tr.inconclusive

    def test_origin_singular_under_c_over_t(self, u_ct):
        tr = initial_trace(u_ct, V_CT)
        cell = tr.cell_at([0.0])
        assert cell.verdict == "singular"
        assert cell.exponent == pytest.approx(-0.5, rel=0.1)
        assert [tuple(c.center) for c in tr.singular] == [(0.0,)]

    @pytest.mark.parametrize("V,tol", [(zero(1), 1e-6), (V_HALF, 0.02)], ids=["free", "half"])
    def test_two_atoms_recovered(self, V, tol):
        tr = initial_trace(_solve(V, TWO), V)
        assert tr.cell_at([0.0]).mass == pytest.approx(0.7, abs=tol)
        assert tr.cell_at([1.0]).mass == pytest.approx(0.4, abs=tol)
        assert tr.cell_at([-1.0]).mass == pytest.approx(0.0, abs=tol)

    def test_trace_measure(self, u_half):
        mu = initial_trace(u_half, V_HALF).trace_measure(min_mass=1e-6)
        assert mu.total_mass() == pytest.approx(1.0, abs=0.02)

    def test_needs_dyadic_levels(self):
        u = step_solve(zero(1), FINE, D0, 0.5, 1.0, times=[0.75])
        with pytest.raises(ValueError):
            initial_trace(u, zero(1))

    def test_write(self, u_half, tmp_path):
        tr = initial_trace(u_half, V_HALF)
        tr.write(tmp_path / "trace.csv")
        rows = list(csv.DictReader(open(tmp_path / "trace.csv")))
        assert len(rows) == len(tr.cells)
        assert all((tmp_path / r["trail_file"]).is_file() for r in rows)


class TestLowerBound:
    def test_regular_trace_solution_lies_below(self, u_half):
        rep = trace_lower_bound_check(u_half, initial_trace(u_half, V_HALF), V_HALF)
        assert rep.verdict == "pass"

    def test_with_singular_cell(self, u_ct):
        rep = trace_lower_bound_check(u_ct, initial_trace(u_ct, V_CT), V_CT)
        assert rep.verdict == "pass"
        assert rep.min_gap > 0


class TestHarnack:
    @pytest.mark.parametrize("V,c", [(zero(1), 0.0), (V_CT, 0.5)], ids=["free", "c_over_t"])
    def test_constant_finite_and_grid_stable(self, V, c):
        g = GridSpec.default(h=0.02, t_min=2.0 ** -8)
        runs = [_solve(V, D0, grid, damping=g.t_min ** -c) for grid in (g, g.refined(2))]
        rep = harnack_audit(runs[0], refined=runs[1])
        assert np.isfinite(rep.constant) and rep.constant > 0
        assert rep.drift <= 0.1
        assert rep.pairs > 100


class TestRepresentation:
    def test_free_kernel_constants(self):
        rep = representation_check(zero(1), GridSpec.default())
        assert rep.verdict == "pass"
        assert rep.gamma1 == pytest.approx(0.25, rel=0.05)
        assert np.exp(rep.intercept) == pytest.approx((4 * np.pi) ** -0.5, rel=0.05)

    def test_bump_envelope(self):
        rep = representation_check(BoundedBump(1.0, Box((-0.5,), (0.5,))), GridSpec.default())
        assert rep.verdict == "pass"
        assert 0 < rep.c1 < rep.c2 < np.inf


class TestSweepTrace:
    def test_empty_singular_set(self, u_half):
        rep = sweep_trace(u_half, V_HALF, [D0])
        assert rep.empty

    def test_c_over_t_family(self, u_ct):
        rep = sweep_trace(u_ct, V_CT, [Measure.dirac(0.0, 0.5), D0], k_list=(1e2, 1e4, 1e6))
        assert not rep.empty
        assert rep.monotone and rep.bounded
        # the Dirac is swept out: gamma_u(mu) carries only what V^k has not yet killed
        assert rep.gammas[1].sum() <= 0.02
        assert rep.gammas[0].sum() <= rep.gammas[1].sum()

    def test_candidate_outside_singular_set(self, u_ct):
        with pytest.raises(ValueError):
            sweep_trace(u_ct, V_CT, [Measure.dirac(1.0)])
