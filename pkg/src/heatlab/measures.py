"""Initial data: finite atomic measures plus a cell-centred density on a uniform grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .grid import Box


class MeasureError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DensityGrid:
    """Piecewise-constant density: ``values[i]`` lives on the cell ``lower + h*[i, i+1]``."""

    lower: tuple[float, ...]
    h: float
    values: np.ndarray

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        values = np.asarray(self.values, dtype=float)
        if values.ndim != len(lower):
            raise MeasureError("density array rank does not match its dimension")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise MeasureError("density values must be finite and nonnegative")
        if not self.h > 0:
            raise MeasureError("density cell size must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def uniform(cls, box: Box, h: float, value: float = 1.0) -> DensityGrid:
        shape = tuple(int(round((hi - lo) / h)) for lo, hi in zip(box.lo, box.hi))
        return cls(box.lo, h, np.full(shape, float(value)))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def box(self) -> Box:
        hi = tuple(l + self.h * m for l, m in zip(self.lower, self.values.shape))
        return Box(self.lower, hi)

    def cell_edges(self) -> list[np.ndarray]:
        return [l + self.h * np.arange(m + 1) for l, m in zip(self.lower, self.values.shape)]

    def cell_centers(self) -> np.ndarray:
        axes = [e[:-1] + 0.5 * self.h for e in self.cell_edges()]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def mass(self) -> float:
        return float(self.values.sum() * self.h ** self.dim)


@dataclass(frozen=True)
class Measure:
    """Nonnegative measure ``sum_i w_i delta_{y_i} + rho(x) dx``.

    ``horizon`` is the time T for which membership in the class of measures with
    finite Gaussian-weighted norm is enforced at construction (``None`` skips it).
    """

    dim: int
    locations: np.ndarray = field(default=None)
    weights: np.ndarray = field(default=None)
    density: DensityGrid | None = None
    horizon: float | None = None

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise MeasureError(f"dimension must be 1, 2 or 3, got {self.dim}")
        locs = np.zeros((0, self.dim)) if self.locations is None else np.asarray(self.locations, float)
        locs = locs.reshape(-1, self.dim)
        w = np.zeros(0) if self.weights is None else np.asarray(self.weights, float).reshape(-1)
        if len(w) != len(locs):
            raise MeasureError("need one weight per atom")
        if not np.all(np.isfinite(locs)):
            raise MeasureError("atom locations must be finite")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise MeasureError("atom weights must be finite and > 0")
        if self.density is not None and self.density.dim != self.dim:
            raise MeasureError("density dimension mismatch")
        object.__setattr__(self, "locations", _frozen(locs))
        object.__setattr__(self, "weights", _frozen(w))
        if self.horizon is not None:
            mT_norm(self, self.horizon)

    # constructors

    @classmethod
    def zero(cls, dim: int) -> Measure:
        return cls(dim)

    @classmethod
    def dirac(cls, point: Sequence[float] | float = 0.0, weight: float = 1.0, dim: int | None = None) -> Measure:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if dim is not None and p.size == 1 and dim > 1:
            p = np.full(dim, p[0])
        return cls(p.size, p.reshape(1, -1), np.array([weight]))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence[float]], dim: int, density: DensityGrid | None = None) -> Measure:
        """Atoms given as ``[x_1, ..., x_n, weight]`` rows."""
        rows = np.asarray(list(atoms), dtype=float).reshape(-1, dim + 1)
        return cls(dim, rows[:, :dim], rows[:, dim], density)

    # views

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    @property
    def is_zero(self) -> bool:
        return self.n_atoms == 0 and (self.density is None or not np.any(self.density.values > 0))

    def total_mass(self) -> float:
        m = float(self.weights.sum())
        if self.density is not None:
            m += self.density.mass()
        return m

    def scaled(self, factor: float) -> Measure:
        if factor < 0:
            raise MeasureError("negative scaling would produce a signed measure")
        if factor == 0:
            return Measure.zero(self.dim)
        dens = None
        if self.density is not None:
            dens = DensityGrid(self.density.lower, self.density.h, factor * self.density.values)
        return Measure(self.dim, self.locations, factor * self.weights, dens, self.horizon)

    def __add__(self, other: Measure) -> Measure:
        if other.dim != self.dim:
            raise MeasureError("cannot add measures of different dimension")
        if self.density is not None and other.density is not None:
            a, b = self.density, other.density
            if a.lower != b.lower or a.h != b.h or a.values.shape != b.values.shape:
                raise MeasureError("densities live on different grids")
            dens = DensityGrid(a.lower, a.h, a.values + b.values)
        else:
            dens = self.density if self.density is not None else other.density
        return Measure(self.dim, np.vstack([self.locations, other.locations]),
                       np.concatenate([self.weights, other.weights]), dens)

    def box_mass(self, box: Box) -> float:
        return restrict(self, box).total_mass()

    def hull(self) -> Box | None:
        """Smallest box containing the support, or None for the zero measure."""
        pts = [self.locations]
        if self.density is not None and np.any(self.density.values > 0):
            b = self.density.box
            pts.append(np.array([b.lo, b.hi]))
        pts = np.vstack(pts)
        if len(pts) == 0:
            return None
        return Box(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))


def mT_norm(mu: Measure, T: float) -> float:
    """Gaussian-weighted total variation ``int exp(-|y|^2 / 4T) d|mu|(y)``."""
    if not T > 0:
        raise MeasureError("T must be positive")
    r2 = np.sum(mu.locations ** 2, axis=1)
    val = float(np.sum(mu.weights * np.exp(-r2 / (4 * T))))
    if mu.density is not None:
        # the weight factorizes over axes, so each cell integrates exactly through erf differences
        s = 2.0 * np.sqrt(T)
        factors = [0.5 * np.sqrt(np.pi) * s * np.diff(erf(e / s)) for e in mu.density.cell_edges()]
        w = factors[0]
        for f in factors[1:]:
            w = np.multiply.outer(w, f)
        val += float(np.sum(mu.density.values * w))
    if not np.isfinite(val):
        raise MeasureError("measure outside the class M_T: weighted norm is not finite")
    return val


def restrict(mu: Measure, box: Box) -> Measure:
    """``chi_box * mu``; density cells are weighted by the fraction of their volume inside the box."""
    if box.dim != mu.dim:
        raise MeasureError("box dimension mismatch")
    if box.is_empty:
        raise MeasureError("cannot restrict to an empty box")
    keep = box.contains(mu.locations)
    dens = None
    if mu.density is not None:
        d = mu.density
        frac = np.ones(d.values.shape)
        for axis, edges in enumerate(d.cell_edges()):
            lo, hi = box.lo[axis], box.hi[axis]
            overlap = np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0, None) / d.h
            shape = [1] * d.dim
            shape[axis] = -1
            frac = frac * overlap.reshape(shape)
        dens = DensityGrid(d.lower, d.h, d.values * frac)
    return Measure(mu.dim, mu.locations[keep], mu.weights[keep], dens)


def split_signed(atoms: Iterable[Sequence[float]], dim: int) -> tuple[Measure, Measure]:
    """Split signed atom rows ``[x..., w]`` into the pair (positive part, negative part)."""
    rows = np.asarray(list(atoms), dtype=float).reshape(-1, dim + 1)
    pos = rows[rows[:, dim] > 0]
    neg = rows[rows[:, dim] < 0].copy()
    neg[:, dim] *= -1
    return Measure.from_atoms(pos, dim), Measure.from_atoms(neg, dim)


def read_density_csv(path: str | Path, dim: int) -> DensityGrid:
    """Read a density dump: header row, then ``x_1, ..., x_n, value`` at cell centres of a uniform grid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = np.array([[float(v) for v in r] for r in reader if r])
    if rows.ndim != 2 or rows.shape[1] != dim + 1:
        raise MeasureError(f"{path}: expected {dim + 1} columns")
    axes = [np.unique(rows[:, d]) for d in range(dim)]
    steps = [np.diff(a) for a in axes if len(a) > 1]
    if not steps:
        raise MeasureError(f"{path}: density grid needs at least two cells")
    h = float(steps[0][0])
    for s in steps:
        if not np.allclose(s, h, rtol=1e-6):
            raise MeasureError(f"{path}: density grid is not uniform with a single step")
    values = np.zeros(tuple(len(a) for a in axes))
    idx = tuple(np.searchsorted(axes[d], rows[:, d]) for d in range(dim))
    values[idx] = rows[:, dim]
    lower = tuple(a[0] - 0.5 * h for a in axes)
    return DensityGrid(lower, h, values)
