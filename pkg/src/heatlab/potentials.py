"""Catalog of nonnegative potentials ``V(x, t)`` and their truncated views.

Every potential is a callable ``V(x, t)`` with ``x`` of shape ``(..., n)`` and ``t``
broadcastable against ``x.shape[:-1]``.  Points on the declared singular locus
evaluate to ``+inf`` rather than raising, so quadrature can drop them uniformly.
"""

from __future__ import annotations

import ast
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import erf

from .grid import Box


class PotentialDomainError(ValueError):
    pass


def _box_probability(center: np.ndarray, tau, box: Box) -> np.ndarray:
    """``int_box H(x - y, tau) dx`` for each row ``y`` of ``center``."""
    center = np.asarray(center, dtype=float).reshape(-1, box.dim)
    s = 2.0 * np.sqrt(np.asarray(tau, dtype=float))
    p = np.ones(len(center)) * np.ones(np.shape(s))
    for d in range(box.dim):
        p = p * 0.5 * (erf((box.hi[d] - center[:, d]) / s) - erf((box.lo[d] - center[:, d]) / s))
    return p


class Potential:
    """Base class.  Subclasses implement ``_eval`` and declare their singular locus."""

    dim: int
    space_independent = False
    singular_at_origin = False
    singular_at_zero_time = False
    time_independent = False

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates, got shape {x.shape}")
        if np.any(t <= 0):
            raise PotentialDomainError("potentials are evaluated for t > 0 only")
        return np.broadcast_to(self._eval(x, t), np.broadcast_shapes(x.shape[:-1], t.shape)).astype(float)

    def _eval(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # metadata used by the quadrature engine and the solvers

    def breakpoints(self) -> list[list[float]]:
        """Per-axis coordinates where V jumps; quadrature panels are aligned with them."""
        return [[] for _ in range(self.dim)]

    def time_breaks(self) -> list[float]:
        """Times where V has a kink or jump in t; time quadrature slabs are split there."""
        return []

    def singular_points(self) -> list[np.ndarray]:
        return [np.zeros(self.dim)] if self.singular_at_origin else []

    def c1_bound(self, T: float) -> float | None:
        """Smallest ``C1`` with ``V(x, t) <= C1 / t`` on ``(0, T)``, or None if no such bound."""
        return None

    def sup(self) -> float:
        return np.inf

    def time_profile(self, t) -> np.ndarray:
        if not self.space_independent:
            raise TypeError(f"{self.spec()} depends on x")
        return self(np.zeros(np.shape(t) + (self.dim,)), t)

    def absorption(self, a: float, b: float) -> float:
        """``int_a^b V(s) ds`` for space-independent potentials; ``inf`` when it diverges."""
        if not self.space_independent:
            raise TypeError(f"{self.spec()} depends on x; no closed-form absorption")
        return self._capped_absorption(a, b, np.inf)

    def _capped_absorption(self, a: float, b: float, k: float) -> float:
        raise NotImplementedError

    has_kernel_average = False

    def kernel_average(self, center: np.ndarray, kernel_time, v_time, box: Box | None = None) -> np.ndarray:
        """``int_box H(center - y, kernel_time) V(y, v_time) dy`` in closed form (catalog kinds that allow it)."""
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.spec()} n={self.dim}>"


@dataclass(frozen=True, repr=False)
class TimePower(Potential):
    """``V = c * t**(-beta)``."""

    c: float
    beta: float
    dim: int = 1
    space_independent = True
    has_kernel_average = True

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("potentials must be nonnegative")

    @property
    def singular_at_zero_time(self):
        return self.c > 0 and self.beta > 0

    def _eval(self, x, t):
        return self.c * t ** (-self.beta)

    def c1_bound(self, T):
        if self.c == 0:
            return 0.0
        return self.c * T ** (1 - self.beta) if self.beta <= 1 else None

    def sup(self):
        return float(self.c) if self.beta == 0 or self.c == 0 else np.inf

    def _capped_absorption(self, a, b, k):
        if b <= a or self.c == 0:
            return 0.0
        c, beta = self.c, self.beta
        if beta <= 0:
            return min(c, k) * (b - a) if beta == 0 else _quad_capped(self, a, b, k)
        s_star = (c / k) ** (1 / beta) if np.isfinite(k) else 0.0
        capped = k * max(min(b, s_star) - min(a, s_star), 0.0) if s_star > 0 else 0.0
        lo, hi = max(a, s_star), max(b, s_star)
        if hi <= lo:
            return capped
        if lo == 0:
            if beta >= 1:
                return np.inf
            return capped + c * hi ** (1 - beta) / (1 - beta)
        if beta == 1:
            return capped + c * np.log(hi / lo)
        return capped + c * (hi ** (1 - beta) - lo ** (1 - beta)) / (1 - beta)

    def kernel_average(self, center, kernel_time, v_time, box=None):
        center = np.asarray(center, dtype=float).reshape(-1, self.dim)
        v = self.c * np.asarray(v_time, dtype=float) ** (-self.beta)
        if box is None:
            return v * np.ones(len(center))
        return v * _box_probability(center, kernel_time, box)

    def spec(self):
        return f"time_power(c={self.c!r}, beta={self.beta!r})"


def _quad_capped(pot, a, b, k):
    from scipy.integrate import quad
    val, _ = quad(lambda s: min(float(pot.time_profile(s)), k), a, b, limit=200)
    return val


@dataclass(frozen=True, repr=False)
class Hardy(Potential):
    """``V = c * |x|**(-gamma)``, singular on ``{x = 0}``."""

    c: float
    gamma: float
    dim: int = 1
    time_independent = True

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("potentials must be nonnegative")

    @property
    def singular_at_origin(self):
        return self.c > 0 and self.gamma > 0

    def _eval(self, x, t):
        r = np.sqrt(np.sum(x * x, axis=-1))
        with np.errstate(divide="ignore"):
            return self.c * np.where(r > 0, r, 0.0) ** (-self.gamma) if self.gamma > 0 else self.c + 0 * r

    def c1_bound(self, T):
        return 0.0 if self.c == 0 else (self.c * T if self.gamma == 0 else None)

    def sup(self):
        return float(self.c) if self.gamma == 0 or self.c == 0 else np.inf

    def spec(self):
        return f"hardy(c={self.c!r}, gamma={self.gamma!r})"


@dataclass(frozen=True, repr=False)
class Product(Potential):
    """``V = c * t**(-beta) * |x|**(-gamma)``."""

    c: float
    beta: float
    gamma: float
    dim: int = 1

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("potentials must be nonnegative")

    @property
    def singular_at_origin(self):
        return self.c > 0 and self.gamma > 0

    @property
    def singular_at_zero_time(self):
        return self.c > 0 and self.beta > 0

    def _eval(self, x, t):
        r = np.sqrt(np.sum(x * x, axis=-1))
        with np.errstate(divide="ignore"):
            space = np.where(r > 0, r, 0.0) ** (-self.gamma) if self.gamma > 0 else 1.0 + 0 * r
        return self.c * t ** (-self.beta) * space

    def c1_bound(self, T):
        if self.c == 0:
            return 0.0
        if self.gamma > 0 or self.beta > 1:
            return None
        return self.c * T ** (1 - self.beta)

    def spec(self):
        return f"product(c={self.c!r}, beta={self.beta!r}, gamma={self.gamma!r})"


@dataclass(frozen=True, repr=False)
class BoundedBump(Potential):
    """``V = c * chi_box(x)``, independent of time."""

    c: float
    box: Box
    has_kernel_average = True
    time_independent = True

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("potentials must be nonnegative")

    @property
    def dim(self):
        return self.box.dim

    def _eval(self, x, t):
        inside = np.all((x >= np.asarray(self.box.lo)) & (x <= np.asarray(self.box.hi)), axis=-1)
        return self.c * inside.astype(float)

    def breakpoints(self):
        return [[l, h] for l, h in zip(self.box.lo, self.box.hi)]

    def c1_bound(self, T):
        return self.c * T

    def sup(self):
        return float(self.c)

    def kernel_average(self, center, kernel_time, v_time, box=None):
        region = self.box if box is None else self.box.intersect(box)
        center = np.asarray(center, dtype=float).reshape(-1, self.dim)
        if region.is_empty:
            return np.zeros(len(center))
        return self.c * _box_probability(center, kernel_time, region)

    def spec(self):
        return f"bounded_bump(c={self.c!r}, lo={list(self.box.lo)!r}, hi={list(self.box.hi)!r})"


class Custom(Potential):
    """Tabulated space-time field with multilinear interpolation; zero outside the spatial table,
    clamped in time.  Assumed regular (no singular locus)."""

    def __init__(self, axes: list[np.ndarray], times: np.ndarray, values: np.ndarray, source: str = "table"):
        self.dim = len(axes)
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("tabulated potential must be finite and nonnegative")
        self.values = values
        self.source = source
        self._interp = RegularGridInterpolator((*self.axes, self.times), values,
                                               bounds_error=False, fill_value=0.0)

    @classmethod
    def from_csv(cls, path: str | Path, dim: int) -> Custom:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = np.array([[float(v) for v in r] for r in reader if r])
        axes = [np.unique(rows[:, d]) for d in range(dim + 1)]
        values = np.zeros(tuple(len(a) for a in axes))
        idx = tuple(np.searchsorted(axes[d], rows[:, d]) for d in range(dim + 1))
        values[idx] = rows[:, dim + 1]
        return cls(axes[:dim], axes[dim], values, source=str(path))

    def _eval(self, x, t):
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        xb = np.broadcast_to(x, shape + (self.dim,)).reshape(-1, self.dim)
        tb = np.clip(np.broadcast_to(t, shape).reshape(-1), self.times[0], self.times[-1])
        return self._interp(np.column_stack([xb, tb])).reshape(shape)

    def c1_bound(self, T):
        tt = self.times.reshape((1,) * self.dim + (-1,))
        return float(np.max(self.values * np.maximum(tt, 0)))

    def sup(self):
        return float(self.values.max())

    def spec(self):
        return f"custom(file={self.source!r})"


@dataclass(frozen=True, repr=False)
class LevelTruncated(Potential):
    """``V^k = min(V, k)``."""

    base: Potential
    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("truncation level must be positive")

    @property
    def dim(self):
        return self.base.dim

    @property
    def space_independent(self):
        return self.base.space_independent

    @property
    def time_independent(self):
        return self.base.time_independent

    @property
    def has_kernel_average(self):
        return isinstance(self.base, (TimePower, BoundedBump)) or (
            isinstance(self.base, TimeTruncated) and self.base.has_kernel_average)

    def _eval(self, x, t):
        return np.minimum(self.base._eval(x, t), self.k)

    def time_breaks(self):
        extra = []
        if isinstance(self.base, TimePower) and self.base.beta > 0 and self.base.c > 0:
            extra = [(self.base.c / self.k) ** (1 / self.base.beta)]
        return self.base.time_breaks() + extra

    def breakpoints(self):
        return self.base.breakpoints()

    def c1_bound(self, T):
        b = self.base.c1_bound(T)
        return self.k * T if b is None else min(b, self.k * T)

    def sup(self):
        return min(self.base.sup(), self.k)

    def _capped_absorption(self, a, b, k):
        return self.base._capped_absorption(a, b, min(k, self.k))

    def kernel_average(self, center, kernel_time, v_time, box=None):
        if isinstance(self.base, BoundedBump):
            capped = BoundedBump(min(self.base.c, self.k), self.base.box)
            return capped.kernel_average(center, kernel_time, v_time, box)
        v = np.minimum(self.base.time_profile(np.asarray(v_time, dtype=float)), self.k)
        center = np.asarray(center, dtype=float).reshape(-1, self.dim)
        p = np.ones(len(center)) if box is None else _box_probability(center, kernel_time, box)
        return v * p

    def spec(self):
        return f"level_truncate({self.base.spec()}, k={self.k!r})"


@dataclass(frozen=True, repr=False)
class TimeTruncated(Potential):
    """``V_delta = V * chi_{t > delta}``."""

    base: Potential
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("time cut must be positive")

    @property
    def dim(self):
        return self.base.dim

    @property
    def space_independent(self):
        return self.base.space_independent

    @property
    def singular_at_origin(self):
        return self.base.singular_at_origin

    @property
    def has_kernel_average(self):
        return self.base.has_kernel_average

    def _eval(self, x, t):
        return np.where(t > self.delta, self.base._eval(x, np.maximum(t, self.delta)), 0.0)

    def time_breaks(self):
        return [self.delta] + self.base.time_breaks()

    def breakpoints(self):
        return self.base.breakpoints()

    def c1_bound(self, T):
        return self.base.c1_bound(T)

    def sup(self):
        return self.base.sup()

    def _capped_absorption(self, a, b, k):
        return self.base._capped_absorption(max(a, self.delta), max(b, self.delta), k)

    def kernel_average(self, center, kernel_time, v_time, box=None):
        v_time = np.asarray(v_time, dtype=float)
        inner = self.base.kernel_average(center, kernel_time, np.maximum(v_time, self.delta), box)
        return np.where(v_time > self.delta, inner, 0.0)

    def spec(self):
        return f"time_truncate({self.base.spec()}, delta={self.delta!r})"


def level_truncate(V: Potential, k: float) -> Potential:
    if isinstance(V, LevelTruncated):
        return LevelTruncated(V.base, min(V.k, k))
    return LevelTruncated(V, k)


def time_truncate(V: Potential, delta: float) -> Potential:
    if isinstance(V, TimeTruncated):
        return TimeTruncated(V.base, max(V.delta, delta))
    return TimeTruncated(V, delta)


def zero(dim: int = 1) -> Potential:
    return TimePower(0.0, 0.0, dim)


_KINDS = {"time_power", "hardy", "product", "bounded_bump", "custom", "zero"}


def parse_potential(text: str, dim: int, base_dir: str | Path = ".") -> Potential:
    """Parse catalog syntax such as ``"time_power(c=0.5, beta=1.0)"``."""
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"cannot parse potential {text!r}") from exc
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name) or node.func.id not in _KINDS:
        raise ValueError(f"unknown potential {text!r}; kinds: {sorted(_KINDS)}")
    if node.args:
        raise ValueError("potential parameters must be passed by keyword")
    kw = {k.arg: ast.literal_eval(k.value) for k in node.keywords}
    kind = node.func.id
    try:
        if kind == "zero":
            return zero(dim)
        if kind == "time_power":
            return TimePower(float(kw["c"]), float(kw["beta"]), dim)
        if kind == "hardy":
            return Hardy(float(kw["c"]), float(kw["gamma"]), dim)
        if kind == "product":
            return Product(float(kw["c"]), float(kw["beta"]), float(kw["gamma"]), dim)
        if kind == "bounded_bump":
            lo, hi = np.atleast_1d(kw["lo"]), np.atleast_1d(kw["hi"])
            if lo.size == 1 and dim > 1:
                lo, hi = np.full(dim, lo[0]), np.full(dim, hi[0])
            return BoundedBump(float(kw["c"]), Box(tuple(lo), tuple(hi)))
        path = Path(kw["file"])
        return Custom.from_csv(path if path.is_absolute() else Path(base_dir) / path, dim)
    except KeyError as exc:
        raise ValueError(f"potential {kind} is missing parameter {exc.args[0]!r}") from exc
