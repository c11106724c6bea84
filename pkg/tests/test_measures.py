import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from heatlab.grid import Box
from heatlab.measures import (DensityGrid, Measure, MeasureError, mT_norm, read_density_csv, restrict,
                              split_signed)

atom_rows = st.lists(st.tuples(st.floats(-5, 5), st.floats(0.01, 3)), min_size=1, max_size=6)


class TestConstruction:
    def test_dirac(self):
        mu = Measure.dirac(0.5, 2.0)
        assert mu.dim == 1 and mu.n_atoms == 1 and mu.total_mass() == 2.0

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(MeasureError):
            Measure(1, [[0.0]], [-1.0])

    def test_rejects_negative_density(self):
        with pytest.raises(MeasureError):
            DensityGrid((0.0,), 0.1, np.array([1.0, -0.5]))

    def test_zero(self):
        assert Measure.zero(2).is_zero
        assert Measure.dirac(0.0).scaled(0).is_zero

    def test_density_mass(self):
        d = DensityGrid.uniform(Box((0.0, 0.0), (1.0, 2.0)), 0.25, 3.0)
        assert d.mass() == pytest.approx(6.0)

    def test_hull(self):
        mu = Measure.from_atoms([[0.0, 1.0], [2.0, 1.0]], 1)
        assert mu.hull() == Box((0.0,), (2.0,))


class TestGaussianNorm:
    def test_atoms_closed_form(self):
        mu = Measure.from_atoms([[1.0, 2.0], [-3.0, 0.5]], 1)
        T = 0.7
        want = 2.0 * np.exp(-1 / (4 * T)) + 0.5 * np.exp(-9 / (4 * T))
        assert mT_norm(mu, T) == pytest.approx(want, rel=1e-14)

    def test_uniform_density_against_quad(self):
        # density cells are integrated exactly, so a coarse grid already matches
        d = DensityGrid.uniform(Box((-1.0,), (2.0,)), 0.25)
        T = 0.5
        want = quad(lambda y: np.exp(-y * y / (4 * T)), -1, 2, epsabs=1e-14)[0]
        assert mT_norm(Measure(1, density=d), T) == pytest.approx(want, rel=1e-12)

    def test_two_dimensional_density_factorizes(self):
        d = DensityGrid.uniform(Box((-1.0, 0.0), (1.0, 0.5)), 0.25, 2.0)
        T = 0.3
        axis = lambda a, b: quad(lambda y: np.exp(-y * y / (4 * T)), a, b, epsabs=1e-14)[0]
        assert mT_norm(Measure(2, density=d), T) == pytest.approx(2.0 * axis(-1, 1) * axis(0, 0.5), rel=1e-12)

    def test_rejects_nonpositive_T(self):
        with pytest.raises(MeasureError):
            mT_norm(Measure.dirac(0.0), 0.0)

    @given(atom_rows, st.floats(0.05, 5))
    def test_bounded_by_mass(self, rows, T):
        mu = Measure.from_atoms(rows, 1)
        assert 0 < mT_norm(mu, T) <= mu.total_mass() * (1 + 1e-12)


class TestRestrict:
    def test_fractional_density_cells(self):
        d = DensityGrid((0.0,), 1.0, np.array([1.0, 1.0]))
        r = restrict(Measure(1, density=d), Box((0.25,), (1.5,)))
        assert r.total_mass() == pytest.approx(1.25)

    def test_atoms_on_boundary_kept(self):
        mu = Measure.from_atoms([[1.0, 1.0], [1.5, 1.0]], 1)
        assert restrict(mu, Box((0.0,), (1.0,))).total_mass() == 1.0

    @given(atom_rows, st.floats(-4, 4))
    def test_split_is_additive(self, rows, cut):
        # open atoms exactly at the cut would be counted twice by closed boxes
        rows = [(x, w) for x, w in rows if abs(x - cut) > 1e-9]
        if not rows:
            return
        mu = Measure.from_atoms(rows, 1)
        left = restrict(mu, Box((-10.0,), (cut,))).total_mass()
        right = restrict(mu, Box((cut,), (10.0,))).total_mass()
        assert left + right == pytest.approx(mu.total_mass())

    @settings(max_examples=30)
    @given(st.floats(-0.99, 1), st.floats(0.05, 1))
    def test_density_split_is_additive(self, cut, h):
        d = DensityGrid((-1.0,), h, np.linspace(0, 1, int(np.ceil(2 / h)) + 1))
        mu = Measure(1, density=d)
        hi = d.box.hi[0]
        left = restrict(mu, Box((-1.0,), (cut,))).total_mass()
        right = restrict(mu, Box((cut,), (hi,))).total_mass()
        assert left + right == pytest.approx(mu.total_mass())

    def test_empty_box_rejected(self):
        with pytest.raises(MeasureError):
            restrict(Measure.dirac(0.0), Box((0.5,), (0.5,)))


class TestSignedAndIO:
    def test_split_signed(self):
        pos, neg = split_signed([[0.0, 1.0], [1.0, -2.0]], 1)
        assert pos.total_mass() == 1.0 and neg.total_mass() == 2.0
        np.testing.assert_allclose(neg.locations, [[1.0]])

    def test_scaled_and_add(self):
        mu = Measure.dirac(0.0) + Measure.dirac(1.0, 3.0)
        assert mu.scaled(2.0).total_mass() == pytest.approx(8.0)
        with pytest.raises(MeasureError):
            mu.scaled(-1.0)

    def test_read_density_csv(self, tmp_path):
        p = tmp_path / "rho.csv"
        p.write_text("x,value\n0.05,1.0\n0.15,2.0\n0.25,3.0\n")
        d = read_density_csv(p, 1)
        assert d.h == pytest.approx(0.1)
        assert d.mass() == pytest.approx(0.6)
        assert d.lower[0] == pytest.approx(0.0)
