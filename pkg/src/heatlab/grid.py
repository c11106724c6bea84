"""Axis-aligned boxes and the space-time discretization shared by every module."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``[lo_1, hi_1] x ... x [lo_n, hi_n]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("box corners have different dimensions")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, half_width: float, dim: int, center: Sequence[float] | None = None) -> Box:
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)
        return cls(tuple(c - half_width), tuple(c + half_width))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def is_empty(self) -> bool:
        return any(h <= l for l, h in zip(self.lo, self.hi))

    @property
    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, self.dim)
        lo = np.asarray(self.lo) - tol
        hi = np.asarray(self.hi) + tol
        return np.all((p >= lo) & (p <= hi), axis=1)

    def intersect(self, other: Box) -> Box:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        return Box(tuple(lo), tuple(np.maximum(hi, lo)))

    def sample(self, spacing: float) -> np.ndarray:
        """Grid of points covering the box (corners included) with at most ``spacing`` between neighbours."""
        axes = []
        for l, h in zip(self.lo, self.hi):
            m = max(int(np.ceil((h - l) / spacing - 1e-9)), 0)
            axes.append(np.linspace(l, h, m + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class GridSpec:
    """Uniform spatial grid on a box plus a geometric time grid refined toward ``t = 0``.

    Time nodes are ``T * ratio**j`` for ``j = J, ..., 0`` with ``T * ratio**J > t_min``,
    preceded by ``t_min`` itself.
    """

    dim: int
    box: Box
    h: float
    T: float
    t_min: float
    ratio: float = 0.5

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if self.box.dim != self.dim:
            raise ValueError("box dimension does not match grid dimension")
        if not self.h > 0:
            raise ValueError("spatial step must be positive")
        if not 0 < self.t_min < self.T:
            raise ValueError("need 0 < t_min < T")
        if not 0 < self.ratio < 1:
            raise ValueError("time ratio must lie in (0, 1)")
        for l, hi in zip(self.box.lo, self.box.hi):
            cells = (hi - l) / self.h
            if cells < 2 or abs(cells - round(cells)) > 1e-6:
                raise ValueError("box side must be an integer multiple (>= 2) of h")

    @classmethod
    def default(cls, dim: int = 1, T: float = 1.0, half_width: float | None = None,
                h: float = 0.02, t_min: float = 0.01, ratio: float = 0.5) -> GridSpec:
        if half_width is None:
            half_width = 8.0 * np.sqrt(T)
        half_width = h * np.ceil(half_width / h - 1e-9)
        return cls(dim, Box.cube(half_width, dim), h, T, t_min, ratio)

    def with_box(self, box: Box) -> GridSpec:
        return GridSpec(self.dim, box, self.h, self.T, self.t_min, self.ratio)

    def refined(self, factor: int = 2) -> GridSpec:
        return GridSpec(self.dim, self.box, self.h / factor, self.T, self.t_min, self.ratio)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(round((hi - lo) / self.h)) + 1 for lo, hi in zip(self.box.lo, self.box.hi))

    def axes(self) -> list[np.ndarray]:
        return [lo + self.h * np.arange(m) for lo, m in zip(self.box.lo, self.shape)]

    def nodes(self) -> np.ndarray:
        """All grid nodes as an array of shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def time_nodes(self) -> np.ndarray:
        J = int(np.floor(np.log(self.t_min / self.T) / np.log(self.ratio) + 1e-12))
        ts = [self.T * self.ratio ** j for j in range(J, -1, -1)]
        ts = [t for t in ts if t > self.t_min * (1 + 1e-12)]
        return np.array([self.t_min] + ts)
