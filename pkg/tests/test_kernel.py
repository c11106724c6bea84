import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from heatlab.grid import Box
from heatlab.kernel import (EngineConfig, QuadratureTrail, SpatialFoci, Tolerances, assess_sequence,
                            combine_trails, heat_kernel, heat_potential, kernel_potential_integral,
                            space_integral, spacetime_integral, trail_from_sequence)
from heatlab.measures import DensityGrid, Measure
from heatlab.potentials import Hardy, TimePower


def _h1(x, t):
    return float(heat_kernel(np.array([[x]]), t)[0])


class TestHeatKernel:
    @pytest.mark.parametrize("t", [1e-3, 0.1, 2.0])
    def test_unit_mass(self, t):
        assert quad(lambda x: _h1(x, t), -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-9)

    @given(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(-2, 2))
    @settings(max_examples=25)
    def test_semigroup(self, s, t, x):
        conv = quad(lambda y: _h1(x - y, s) * _h1(y, t), -np.inf, np.inf)[0]
        assert conv == pytest.approx(_h1(x, s + t), rel=1e-7)

    def test_second_moment(self):
        t = 0.3
        assert quad(lambda x: x * x * _h1(x, t), -np.inf, np.inf)[0] == pytest.approx(2 * t)

    def test_product_structure_2d(self):
        x = np.array([[0.3, -0.4]])
        assert heat_kernel(x, 0.2)[0] == pytest.approx(_h1(0.3, 0.2) * _h1(-0.4, 0.2))

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            heat_kernel(np.zeros((1, 1)), 0.0)


class TestHeatPotential:
    def test_atoms_sum(self):
        mu = Measure.from_atoms([[0.0, 1.0], [1.0, 2.0]], 1)
        x = np.array([[0.5]])
        assert heat_potential(mu, x, 0.1)[0] == pytest.approx(3 * _h1(0.5, 0.1))

    def test_density_cells_exact(self):
        d = DensityGrid((-0.5,), 0.25, np.array([1.0, 3.0, 2.0, 0.5]))
        mu = Measure(1, density=d)
        x, t = 0.1, 0.02
        edges = d.cell_edges()[0]
        want = sum(v * quad(lambda y: _h1(x - y, t), a, b)[0] for v, a, b in zip(d.values, edges[:-1], edges[1:]))
        assert heat_potential(mu, np.array([[x]]), t)[0] == pytest.approx(want, rel=1e-10)

    def test_density_2d_total_mass(self):
        d = DensityGrid.uniform(Box((-0.5, -0.5), (0.5, 0.5)), 0.1, 2.0)
        mu = Measure(2, density=d)
        # mass is preserved: integrate H[mu](., t) over a wide grid
        g = np.linspace(-4, 4, 321)
        X, Y = np.meshgrid(g, g, indexing="ij")
        vals = heat_potential(mu, np.stack([X, Y], -1), 0.1)
        assert np.trapezoid(np.trapezoid(vals, g, axis=1), g) == pytest.approx(2.0, rel=1e-6)


class TestAssessSequence:
    @given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.2, 0.9))
    def test_geometric_tail_is_extrapolated(self, A, B, q):
        vals = [A + 10 - B * q ** l for l in range(40)]
        verdict, value, err = assess_sequence(vals)
        assert verdict == "converged"
        assert value == pytest.approx(A + 10, abs=1e-6 * abs(A + 10) + 1e-9)

    @given(st.floats(0.05, 5))
    def test_logarithmic_growth_is_divergent(self, c):
        vals = [c * l for l in range(1, 8)]
        assert assess_sequence(vals)[0] == "divergent"

    def test_power_growth_is_divergent(self):
        assert assess_sequence([2 ** (l / 2) for l in range(8)])[0] == "divergent"

    def test_short_sequences_inconclusive(self):
        assert assess_sequence([1.0, 2.0, 3.0])[0] == "inconclusive"
        assert assess_sequence([])[0] == "inconclusive"

    def test_slow_convergence_inconclusive(self):
        # gaps that shrink too slowly to certify either way
        vals = np.cumsum(1 / np.arange(1, 8) ** 1.01)
        assert assess_sequence(vals)[0] == "inconclusive"

    def test_infinite_last_value(self):
        assert assess_sequence([1.0, np.inf])[0] == "divergent"

    def test_tolerance_matters(self):
        vals = [1 - 0.5 ** l for l in range(1, 12)]
        assert assess_sequence(vals, Tolerances(rtol=1e-2))[0] == "converged"
        assert assess_sequence(vals, Tolerances(rtol=1e-6))[0] == "inconclusive"


class TestTrails:
    def test_constant(self):
        assert QuadratureTrail.constant(2.0).converged
        assert QuadratureTrail.constant(np.inf).divergent

    def test_csv(self, tmp_path):
        tr = trail_from_sequence([0.5, 0.25, 0.125, 0.0625], [1.0, 1.5, 1.75, 1.875])
        p = tmp_path / "t.csv"
        tr.to_csv(p)
        rows = list(csv.reader(open(p)))
        assert rows[0] == ["level", "eps", "value", "gap", "verdict"]
        assert len(rows) == 5

    def test_combine_linear(self):
        a = trail_from_sequence(range(30), [1 - 0.5 ** l for l in range(30)])
        b = trail_from_sequence(range(30), [2 - 0.5 ** l for l in range(30)])
        c = combine_trails([a, b], [2.0, 3.0])
        assert c.converged and c.value == pytest.approx(2 * a.value + 3 * b.value)

    def test_combine_divergence_propagates(self):
        a = trail_from_sequence(range(30), [1 - 0.5 ** l for l in range(30)])
        d = trail_from_sequence(range(8), [float(l) for l in range(8)])
        assert combine_trails([a, d], [1.0, 1e-6]).divergent
        assert not combine_trails([a, d], [1.0, 0.0]).divergent


class TestSpatialRule:
    @given(st.floats(1e-5, 1.0), st.floats(-1, 1))
    @settings(max_examples=40)
    def test_narrow_gaussians_integrate_to_one(self, t, y):
        box = Box((-10.0,), (10.0,))
        val = space_integral(lambda x, s: heat_kernel(x - y, s), box, t, SpatialFoci(centers=((y,),)))
        assert val == pytest.approx(1.0, rel=1e-8)

    def test_window_matches_full_box(self):
        box = Box((-10.0, -10.0), (10.0, 10.0))
        f = lambda x, s: heat_kernel(x, s) * (1 + x[..., 0] ** 2)
        full = space_integral(f, box, 0.01, SpatialFoci(centers=((0.0, 0.0),)))
        win = space_integral(f, box, 0.01, SpatialFoci(centers=((0.0, 0.0),), window=12.0))
        # E[1 + X_1^2] = 1 + 2t; the window only drops a negligible Gaussian tail
        assert win == pytest.approx(1 + 2 * 0.01, rel=1e-9)
        assert full == pytest.approx(1 + 2 * 0.01, rel=1e-7)

    def test_jump_breakpoint(self):
        box = Box((-1.0,), (1.0,))
        f = lambda x, s: (x[..., 0] > 0.3).astype(float)
        assert space_integral(f, box, 1.0, SpatialFoci(breaks=((0.3,),))) == pytest.approx(0.7, rel=1e-12)


class TestEngine:
    @given(st.floats(0.0, 0.6), st.floats(0.25, 2.0))
    @settings(max_examples=15, deadline=None)
    def test_time_powers(self, beta, T):
        tr = kernel_potential_integral(TimePower(1.0, beta), [0.0], T)
        assert tr.converged
        assert tr.value == pytest.approx(T ** (1 - beta) / (1 - beta), rel=2e-3)

    def test_slow_tail_stays_inconclusive(self):
        # t^-3/4: the tail 4 eps^(1/4) needs more than 24 halvings to reach rtol 1e-3
        tr = kernel_potential_integral(TimePower(1.0, 0.75), [0.0], 1.0)
        assert tr.verdict == "inconclusive" and len(tr.values) == 24

    def test_one_over_t_diverges(self):
        tr = kernel_potential_integral(TimePower(1.0, 1.0), [0.0], 1.0)
        assert tr.divergent and len(tr.values) >= 6

    def test_hardy_3d_gamma_one_origin(self):
        # E|X|^-1 for X ~ N(0, 2t I_3) is (pi t)^-1/2, integrating to 2 / sqrt(pi) on (0, 1)
        tr = kernel_potential_integral(Hardy(1.0, 1.0, 3), [0.0, 0.0, 0.0], 1.0)
        assert tr.converged and tr.value == pytest.approx(2 / np.sqrt(np.pi), rel=2e-3)

    def test_hardy_3d_gamma_two_origin_diverges(self):
        # inner integral is 1 / (2t): logarithmic divergence at t = 0
        tr = kernel_potential_integral(Hardy(1.0, 2.0, 3), [0.0, 0.0, 0.0], 1.0)
        assert tr.divergent
        gaps = np.diff(tr.values)[-3:]
        np.testing.assert_allclose(gaps, 0.5 * np.log(2), rtol=0.02)

    def test_spacetime_generic_box(self):
        # int_0^1 int_[0,1] x dx dt = 1/2 on a bounded integrand, levels converge geometrically
        tr = spacetime_integral(lambda x, t: x[..., 0] + 0 * t, Box((0.0,), (1.0,)), 1.0,
                                config=EngineConfig(tol=Tolerances(rtol=1e-6)))
        assert tr.converged and tr.value == pytest.approx(0.5, rel=1e-6)
