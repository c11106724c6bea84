"""Finite-difference solver for ``u_t - Lap u + V u = 0`` on boxes and the approximation schemes built on it.

One step is Crank-Nicolson diffusion (dimension by dimension in 2-d) followed by the implicit
reaction ``u <- u / (1 + dt V(t + dt/2))``.  With ``dt <= h^2`` both stages are monotone and
positivity preserving, so the discrete solutions inherit the comparison principle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from scipy.special import erf

from .classify import omega_weight, pmap
from .grid import Box, GridSpec
from .kernel import heat_kernel, heat_potential, spacetime_integral, SpatialFoci
from .measures import Measure, mT_norm, restrict
from .potentials import Potential, level_truncate, time_truncate, zero


class SolverError(RuntimeError):
    pass


class MonotonicityError(SolverError):
    pass


@dataclass
class Field:
    """Snapshots ``values[j]`` of a discrete solution at ``times[j]`` on the nodes of ``grid``.

    ``absorbed[j]`` and ``outflow[j]`` are the masses removed by the reaction term and through
    the walls between ``times[0]`` and ``times[j]``; ``damping`` is the factor applied to the
    initial free profile to account for absorption before ``times[0]``.
    """

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray
    absorbed: np.ndarray
    outflow: np.ndarray
    potential: Potential
    init_measure: Measure | None = None
    damping: float = 1.0
    provenance: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    def index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[j], t, rtol=1e-9, atol=0):
            raise KeyError(f"no snapshot at t={t}")
        return j

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.grid.shape, self.grid.cell_volume)
        for axis in range(self.grid.dim):
            idx = [slice(None)] * self.grid.dim
            idx[axis] = 0
            w[tuple(idx)] *= 0.5
            idx[axis] = -1
            w[tuple(idx)] *= 0.5
        return w

    def mass(self, j: int | None = None) -> np.ndarray | float:
        w = self.trapezoid_weights()
        if j is None:
            return np.array([float(np.sum(v * w)) for v in self.values])
        return float(np.sum(self.values[j] * w))

    def sample(self, points, t: float) -> np.ndarray:
        """Multilinear interpolation in space; linear in time between bracketing snapshots."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.grid.dim)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise ValueError(f"t={t} outside the solved interval")
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and np.isclose(self.times[j], t, rtol=1e-9):
            return self._space_interp(j, pts)
        a = (t - self.times[j - 1]) / (self.times[j] - self.times[j - 1])
        return (1 - a) * self._space_interp(j - 1, pts) + a * self._space_interp(j, pts)

    def _space_interp(self, j: int, pts: np.ndarray) -> np.ndarray:
        interp = RegularGridInterpolator(self.grid.axes(), self.values[j], bounds_error=False, fill_value=0.0)
        return interp(pts)

    def write_slices(self, directory: str | Path, prefix: str = "field") -> list[Path]:
        """One CSV per snapshot: node coordinates then value."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nodes = self.grid.nodes().reshape(-1, self.grid.dim)
        header = [f"x{d + 1}" for d in range(self.grid.dim)] + ["u"]
        paths = []
        for j, t in enumerate(self.times):
            p = directory / f"{prefix}_{j:03d}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["# t", repr(float(t))])
                w.writerow(header)
                for x, v in zip(nodes, self.values[j].ravel()):
                    w.writerow([*(repr(float(c)) for c in x), repr(float(v))])
            paths.append(p)
        return paths


# ---------------------------------------------------------------- stepping

@dataclass(frozen=True)
class StepControl:
    theta: float = 0.005       # dt <= theta * t resolves t-singular potentials
    r_max: float = 1.0         # dt <= r_max * h^2 keeps Crank-Nicolson monotone
    dt_max: float = np.inf
    stiff_limit: float = 1e3   # dt * max V above this triggers subdivision
    max_pieces: int = 64


def _banded(m: int, r: float, dirichlet: bool) -> np.ndarray:
    ab = np.zeros((3, m))
    ab[0, 1:] = -r / 2
    ab[1, :] = 1 + r
    ab[2, :-1] = -r / 2
    if not dirichlet:
        ab[0, 1] = -r
        ab[2, -2] = -r
    return ab


def _laplace_axis0(u: np.ndarray, dirichlet: bool) -> np.ndarray:
    """Second difference along axis 0 (unit spacing); Dirichlet nodes at both ends stay zero."""
    lap = np.zeros_like(u)
    lap[1:-1] = u[:-2] - 2 * u[1:-1] + u[2:]
    if not dirichlet:
        lap[0] = 2 * (u[1] - u[0])
        lap[-1] = 2 * (u[-2] - u[-1])
    return lap


def _diffuse(u: np.ndarray, r: float, dirichlet: bool) -> np.ndarray:
    for axis in range(u.ndim):
        v = np.moveaxis(u, axis, 0)
        rhs = v + 0.5 * r * _laplace_axis0(v, dirichlet)
        out = np.zeros_like(v)
        if dirichlet:
            m = v.shape[0] - 2
            out[1:-1] = solve_banded((1, 1), _banded(m, r, True), rhs[1:-1].reshape(m, -1)).reshape(rhs[1:-1].shape)
        else:
            m = v.shape[0]
            out[:] = solve_banded((1, 1), _banded(m, r, False), rhs.reshape(m, -1)).reshape(rhs.shape)
        u = np.moveaxis(out, 0, axis)
    return u


class _PotentialOnGrid:
    """Evaluates V on the nodes, caching when V is space- or time-independent."""

    def __init__(self, V: Potential, nodes: np.ndarray):
        self.V, self.nodes = V, nodes
        self._static = V(nodes, 1.0) if V.time_independent else None

    def __call__(self, t: float) -> np.ndarray | float:
        if self._static is not None:
            return self._static
        if self.V.space_independent:
            return float(self.V.time_profile(np.array(t)))
        return self.V(self.nodes, t)


def _initial_profile(init, grid: GridSpec, t0: float, dirichlet: bool) -> np.ndarray:
    if isinstance(init, Measure):
        u = heat_potential(init, grid.nodes(), t0)
    else:
        u = np.array(init, dtype=float)
        if u.shape != grid.shape:
            raise ValueError(f"initial profile has shape {u.shape}, grid needs {grid.shape}")
    if not np.all(np.isfinite(u)) or np.any(u < 0):
        raise ValueError("initial data must be finite and nonnegative")
    if dirichlet:
        for axis in range(grid.dim):
            idx = [slice(None)] * grid.dim
            idx[axis] = 0
            u[tuple(idx)] = 0.0
            idx[axis] = -1
            u[tuple(idx)] = 0.0
    return u


def snapshot_times(grid: GridSpec, t0: float, T: float, per_octave: int = 1, end_refine: int = 0) -> np.ndarray:
    """Grid time nodes in ``[t0, T]`` (geometric, ``per_octave`` per halving) plus ``t0`` and ``T``.

    ``end_refine`` adds ``T - (T - t0) 2^-j`` for ``j = 1..end_refine`` (integrands that vanish at T).
    """
    base = grid.time_nodes()
    ts = [t0, T]
    if per_octave <= 1:
        ts.extend(base)
    else:
        j = np.arange(0, int(np.ceil(per_octave * np.log2(T / t0))) + 1)
        ts.extend(T * 2.0 ** (-j / per_octave))
    ts.extend(T - (T - t0) * 2.0 ** -np.arange(1, end_refine + 1))
    ts = np.unique(np.round(np.asarray(ts, dtype=float), 14))
    return ts[(ts >= t0 * (1 - 1e-12)) & (ts <= T * (1 + 1e-12))]


def step_solve(V: Potential, grid: GridSpec, init, t0: float, T: float | None = None, dirichlet: bool = True,
               times: Sequence[float] | None = None, damping: float = 1.0,
               control: StepControl = StepControl(), tag: str = "step_solve") -> Field:
    """Advance ``init`` (a Measure, giving the exact profile ``damping * H[mu](., t0)``, or a node
    array) from ``t0`` to ``T``, storing snapshots at ``times`` (default: grid time nodes)."""
    T = grid.T if T is None else T
    if not 0 < t0 < T:
        raise ValueError("need 0 < t0 < T")
    if V.dim != grid.dim:
        raise ValueError("potential and grid dimensions differ")
    if grid.dim > 2:
        raise ValueError("PDE solves support n = 1, 2")
    u = damping * _initial_profile(init, grid, t0, dirichlet)
    targets = snapshot_times(grid, t0, T) if times is None else np.unique(np.concatenate([[t0, T], times]))
    targets = targets[(targets >= t0) & (targets <= T)]
    nodes = grid.nodes()
    Vg = _PotentialOnGrid(V, nodes)
    w = Field(grid, targets, np.zeros((1,) + grid.shape), np.zeros(1), np.zeros(1), V).trapezoid_weights()
    h2 = grid.h ** 2
    snaps, absorbed, outflow = [u.copy()], [0.0], [0.0]
    t, absorbed_total, outflow_total = t0, 0.0, 0.0
    for target in targets[1:]:
        while t < target * (1 - 1e-13):
            dt = min(control.theta * t, control.r_max * h2, control.dt_max, target - t)
            if target - (t + dt) < 1e-9 * dt:
                dt = target - t
            vmid = Vg(t + dt / 2)
            vmax = float(np.max(np.where(np.isfinite(vmid), vmid, 0.0)))
            pieces = max(int(np.ceil(dt * vmax / control.stiff_limit)), 1)
            if pieces > control.max_pieces:
                raise SolverError(f"cannot resolve V: dt*max V = {dt * vmax:.3g} needs {pieces} substeps")
            sub = dt / pieces
            for p in range(pieces):
                ts = t + (p + 0.5) * sub
                before = float(np.sum(u * w))
                u = _diffuse(u, sub / h2, dirichlet)
                mid = float(np.sum(u * w))
                vv = Vg(ts) if pieces > 1 else vmid
                factor = np.where(np.isfinite(vv), 1.0 / (1.0 + sub * vv), 0.0) if np.ndim(vv) else 1.0 / (1.0 + sub * vv)
                u = u * factor
                outflow_total += before - mid
                absorbed_total += mid - float(np.sum(u * w))
            umin = u.min()
            if umin < 0:
                if umin < -1e-10 * max(u.max(), 1e-300):
                    raise SolverError(f"negative values {umin:.3g} at t={t + dt:.6g}")
                u = np.maximum(u, 0.0)
            t += dt
        t = float(target)
        snaps.append(u.copy())
        absorbed.append(absorbed_total)
        outflow.append(outflow_total)
    return Field(grid, targets, np.array(snaps), np.array(absorbed), np.array(outflow), V,
                 init if isinstance(init, Measure) else None, damping,
                 {"scheme": tag, "V": V.spec(), "t0": t0, "T": T, "dirichlet": dirichlet})


def pre_damping(V: Potential, t0: float) -> float:
    """``exp(-int_0^t0 V)`` for space-independent V (exact free-space absorption), else 1."""
    if not V.space_independent:
        return 1.0
    A = V.absorption(0.0, t0)
    return float(np.exp(-A)) if np.isfinite(A) else 0.0


# ---------------------------------------------------------------- sweeps

@dataclass
class Sweep:
    """Members of one approximation scheme with the monotonicity and convergence evidence."""

    scheme: str
    params: list[float]
    members: list[Field]
    max_violation: float
    converged: bool
    last_change: float
    notes: list[str] = field(default_factory=list)


def _compare(lo: np.ndarray, hi: np.ndarray, scale: float, floor: float = 1e-6) -> float:
    """Largest excess of ``lo`` over ``hi`` in units of the tolerance ``floor * scale + 1%``."""
    excess = lo - hi
    allowed = floor * scale + 0.01 * np.abs(hi)
    return float(np.max(excess / allowed)) if excess.size else 0.0


def _free_scale(mu: Measure, grid: GridSpec, t: float) -> float:
    return float(np.max(heat_potential(mu, grid.nodes(), t))) if not mu.is_zero else 1.0


def _sweep_change(a: np.ndarray, b: np.ndarray, scales: np.ndarray) -> float:
    """Largest snapshot-wise ``max |a - b|`` relative to the free solution's maximum at that time."""
    diff = np.abs(a - b).reshape(len(a), -1).max(axis=1)
    return float(np.max(diff / scales))


def _check_chain(fields: list[Field], decreasing: bool, scale: float, align=None) -> float:
    worst = -np.inf
    for f1, f2 in zip(fields[:-1], fields[1:]):
        a, b = (f1.values, f2.values) if align is None else align(f1, f2)
        v = _compare(b, a, scale) if decreasing else _compare(a, b, scale)
        worst = max(worst, v)
    return worst


def solve_level_truncation(V: Potential, mu: Measure, k_list: Sequence[float], grid: GridSpec,
                           times: Sequence[float] | None = None, dirichlet: bool = True,
                           control: StepControl = StepControl(), workers: int = 1) -> Sweep:
    """Solutions with ``V^k = min(V, k)`` for increasing ``k``; asserts pointwise decrease in ``k``."""
    ks = [float(k) for k in k_list]
    if np.any(np.diff(ks) <= 0):
        raise ValueError("k_list must increase")
    t0 = grid.t_min

    def run(k):
        Vk = level_truncate(V, k)
        return step_solve(Vk, grid, mu, t0, grid.T, dirichlet, times, pre_damping(Vk, t0), control,
                          tag=f"level_truncation k={k:g}")

    fields = pmap(run, ks, workers)
    scale = _free_scale(mu, grid, t0)
    worst = _check_chain(fields, decreasing=True, scale=scale)
    if worst > 1:
        raise MonotonicityError(f"u_k not decreasing in k (excess {worst:.3g} x tolerance)")
    return _finish("level_truncation", ks, fields, worst, mu)


def solve_time_truncation(V: Potential, mu: Measure, delta_list: Sequence[float], grid: GridSpec,
                          times: Sequence[float] | None = None, dirichlet: bool = True,
                          control: StepControl = StepControl(), workers: int = 1) -> Sweep:
    """Solutions with ``V_delta = V chi_{t > delta}`` for decreasing ``delta``."""
    ds = [float(d) for d in delta_list]
    if np.any(np.diff(ds) >= 0):
        raise ValueError("delta_list must decrease")
    t0 = grid.t_min

    def run(d):
        Vd = zero(V.dim) if d >= grid.T else time_truncate(V, d)
        return step_solve(Vd, grid, mu, t0, grid.T, dirichlet, times, pre_damping(Vd, t0), control,
                          tag=f"time_truncation delta={d:g}")

    fields = pmap(run, ds, workers)
    scale = _free_scale(mu, grid, t0)
    worst = _check_chain(fields, decreasing=True, scale=scale)
    if worst > 1:
        raise MonotonicityError(f"u_delta not decreasing as delta decreases (excess {worst:.3g} x tolerance)")
    return _finish("time_truncation", ds, fields, worst, mu)


def _embed(small: Field, big: Field) -> tuple[np.ndarray, np.ndarray]:
    off = [int(round((ls - lb) / big.grid.h)) for ls, lb in zip(small.grid.box.lo, big.grid.box.lo)]
    sl = (slice(None),) + tuple(slice(o, o + m) for o, m in zip(off, small.grid.shape))
    return small.values, big.values[sl]


def solve_exhaustion(V: Potential, mu: Measure, R_list: Sequence[float], grid: GridSpec,
                     times: Sequence[float] | None = None, k: float | None = None,
                     control: StepControl = StepControl(), workers: int = 1) -> Sweep:
    """Dirichlet problems on ``[-R, R]^n`` with data ``chi_{[-R,R]^n} mu``; asserts increase in ``R``.

    ``k`` optionally truncates V (needed when V is singular at t = 0 and mu is a Dirac).
    """
    Rs = [grid.h * round(float(R) / grid.h) for R in R_list]
    if np.any(np.diff(Rs) <= 0):
        raise ValueError("R_list must increase (after rounding to the grid)")
    t0 = grid.t_min
    W = V if k is None else level_truncate(V, k)

    def run(R):
        g = grid.with_box(Box.cube(R, grid.dim))
        box = g.box
        mu_R = restrict(mu, box)
        if mu_R.is_zero:
            zeros = np.zeros(g.shape)
            return step_solve(W, g, zeros, t0, grid.T, True, times, 1.0, control, tag=f"exhaustion R={R:g}")
        return step_solve(W, g, mu_R, t0, grid.T, True, times, pre_damping(W, t0), control,
                          tag=f"exhaustion R={R:g}")

    fields = pmap(run, Rs, workers)
    scale = _free_scale(mu, grid, t0)
    worst = _check_chain(fields, decreasing=False, scale=scale, align=_embed)
    if worst > 1:
        raise MonotonicityError(f"u_R not increasing in R (excess {worst:.3g} x tolerance)")
    sw = _finish("exhaustion", Rs, fields, worst, mu, align=_embed)
    return sw


def _finish(scheme, params, fields, worst, mu, align=None) -> Sweep:
    if len(fields) >= 2:
        a, b = (fields[-2].values, fields[-1].values) if align is None else align(fields[-2], fields[-1])
        g = fields[-1].grid
        scales = np.array([_free_scale(mu, g, t) for t in fields[-1].times])
        change = _sweep_change(a, b, scales)
    else:
        change = np.inf
    converged = change < 0.01
    notes = [] if converged else ["not yet converged"]
    return Sweep(scheme, list(params), fields, worst, converged, change, notes)


# Comparing a discrete solution with the exact free solution also carries the discretization
# error of narrow Gaussian tails, hence a larger absolute floor than between sweep members.
FREE_FLOOR = 1e-4


def comparison_violation(u: Field, mu: Measure) -> float:
    """Largest ``(u - H[mu])`` over all nodes and snapshots in units of ``FREE_FLOOR max H + 1% H``."""
    worst = -np.inf
    nodes = u.grid.nodes()
    for t, v in zip(u.times, u.values):
        free = heat_potential(mu, nodes, t)
        if v.min() < 0:
            return np.inf
        worst = max(worst, _compare(v, free, float(free.max()) if free.size else 1.0, FREE_FLOOR))
    return worst


# ---------------------------------------------------------------- kernels

@dataclass
class KernelEstimate:
    y: np.ndarray
    field: Field
    sigma: float
    R: float
    k: float
    max_ratio: float   # max H_V / H over nodes where H is at least 1% of its peak


def kernel_estimate(V: Potential, y, grid: GridSpec, sigma: float, k: float = 1e6,
                    times: Sequence[float] | None = None, control: StepControl = StepControl()) -> KernelEstimate:
    """``H_V(., y, .)`` from the free profile ``H(. - y, sigma^2)`` at ``t = sigma^2`` with ``V^k``."""
    if sigma < 2 * grid.h:
        raise ValueError("sigma must be at least 2h to be resolved")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    t0 = sigma ** 2
    Vk = level_truncate(V, k)
    if times is None:
        times = snapshot_times(grid, t0, grid.T)
    mu = Measure.dirac(y)
    f = step_solve(Vk, grid, mu, t0, grid.T, True, times, pre_damping(Vk, t0), control,
                   tag=f"kernel y={tuple(float(c) for c in y)} sigma={sigma:g} k={k:g}")
    worst = 0.0
    nodes = grid.nodes()
    for t, v in zip(f.times, f.values):
        H = heat_kernel(nodes - y, t)
        if np.any(v < 0):
            raise SolverError("negative kernel estimate")
        # far tails carry a few percent relative discretization error; the pointwise bound below covers them
        mask = H >= 1e-2 * H.max()
        worst = max(worst, float(np.max(v[mask] / H[mask])))
        if np.any(v > 1.01 * H + FREE_FLOOR * H.max()):
            raise SolverError("kernel estimate exceeds the free kernel")
    R = float(np.max(np.abs(grid.box.hi)))
    return KernelEstimate(y, f, sigma, R, k, worst)


# ---------------------------------------------------------------- reduced measures

@dataclass
class ReduceResult:
    u_star: Field
    m_star: float
    verdict: str
    probe_times: list[float]
    masses: list[float]
    drift: float
    sweep: Sweep
    notes: list[str] = field(default_factory=list)


def pre_absorbed_mass(V: Potential, mu: Measure, t0: float) -> float:
    """``int_0^t0 int V u*`` for the limit solution when V is space-independent, else 0.

    The limit of ``V^k`` solutions below ``t0`` is ``exp(-int_0^s V) H[mu]``; its absorbed mass
    is ``mu(R^n) (1 - exp(-int_0^t0 V))``, and zero when the absorption diverges at 0.
    """
    if not V.space_independent or mu.is_zero:
        return 0.0
    A = V.absorption(0.0, t0)
    if not np.isfinite(A):
        return 0.0
    return mu.total_mass() * (1.0 - np.exp(-A))


def mass_balance(u: Field, V: Potential, mu: Measure) -> np.ndarray:
    """``m(t) = int u(t) + int_0^t int V u + outflow`` at every snapshot of ``u``."""
    return u.mass() + u.absorbed + u.outflow + pre_absorbed_mass(V, mu, u.t0)


def reduce(V: Potential, mu: Measure, grid: GridSpec,
           k_list: Sequence[float] = (1e2, 1e3, 1e4, 1e5, 1e6),
           sweep: Sweep | None = None, probe_times: Sequence[float] | None = None,
           drift_tol: float = 0.05, times: Sequence[float] | None = None,
           control: StepControl = StepControl(), workers: int = 1) -> ReduceResult:
    """Total mass of the reduced measure from the decreasing limit of the ``V^k`` sweep."""
    if mu.is_zero:
        f = step_solve(zero(grid.dim), grid, np.zeros(grid.shape), grid.t_min, grid.T, True, times, 1.0, control)
        empty = Sweep("level_truncation", [], [f], 0.0, True, 0.0)
        return ReduceResult(f, 0.0, "ok", [grid.T], [0.0], 0.0, empty)
    if sweep is None:
        sweep = solve_level_truncation(V, mu, k_list, grid, times, True, control, workers)
    u = sweep.members[-1]
    if probe_times is None:
        ts = u.times
        probe_times = [ts[len(ts) // 3], ts[(2 * len(ts)) // 3], ts[-1]]
    m = mass_balance(u, V, mu)
    masses = [float(m[u.index(t)]) for t in probe_times]
    drift = (max(masses) - min(masses)) / mu.total_mass()
    notes = list(sweep.notes)
    if not V.space_independent:
        notes.append("absorption before t_min not accounted (V depends on x)")
    verdict = "ok" if drift <= drift_tol else "inconclusive"
    if verdict == "inconclusive":
        notes.append(f"mass drift {drift:.3g} exceeds {drift_tol}: grid too coarse")
    return ReduceResult(u, float(np.median(masses)), verdict, list(probe_times), masses, drift, sweep, notes)


# ---------------------------------------------------------------- Duhamel identity

def _convolve_cells(grid: GridSpec, w: np.ndarray, probes: np.ndarray, tau: float) -> np.ndarray:
    """``int H(x - y, tau) w(y) dy`` with ``w`` constant on the cell around each node (exact in y)."""
    if tau <= 0:
        return RegularGridInterpolator(grid.axes(), w, bounds_error=False, fill_value=0.0)(probes)
    factors = []
    for d, ax in enumerate(grid.axes()):
        edges = np.concatenate([ax - grid.h / 2, [ax[-1] + grid.h / 2]])
        z = (probes[:, d, None] - edges[None, :]) / (2 * np.sqrt(tau))
        e = erf(z)
        factors.append(0.5 * (e[:, :-1] - e[:, 1:]))
    if grid.dim == 1:
        return factors[0] @ w
    return np.einsum("mi,ij,mj->m", factors[0], w, factors[1])


def duhamel_term(u: Field, V: Potential, probes: np.ndarray, t: float) -> np.ndarray:
    """``int_{t0}^t int H(x - y, t - s) V u (y, s) dy ds`` by the trapezoid rule over snapshots."""
    j_end = u.index(t)
    nodes = u.grid.nodes()
    ss = u.times[:j_end + 1]
    vals = []
    for s, v in zip(ss, u.values[:j_end + 1]):
        Vs = V(nodes, s)
        wv = np.where(v > 0, np.where(np.isfinite(Vs), Vs, 0.0) * v, 0.0)
        vals.append(_convolve_cells(u.grid, wv, probes, t - s))
    vals = np.array(vals)
    if len(ss) < 2:
        return np.zeros(len(probes))
    return np.trapezoid(vals, ss, axis=0)


def duhamel_residual(u: Field, V: Potential, candidate: Measure, probes=None,
                     probe_times: Sequence[float] | None = None) -> float:
    """``max |u + D - H[candidate]| / (H[candidate] + floor)`` over probe points and times.

    ``D`` adds to the snapshot convolution the mass absorbed before ``t0`` (exact for
    space-independent V, whose pre-``t0`` solution is ``exp(-int V) H[mu]``).
    """
    g = u.grid
    if probes is None:
        st = np.sqrt(g.T)
        probes = np.array([[c] * g.dim for c in (0.0, 0.5 * st, st)])
    probes = np.asarray(probes, dtype=float).reshape(-1, g.dim)
    if probe_times is None:
        ts = u.times
        probe_times = [ts[len(ts) // 2], ts[(3 * len(ts)) // 4], ts[-1]]
    mu0 = u.init_measure
    A = V.absorption(0.0, u.t0) if V.space_independent else 0.0
    pre_factor = 0.0 if (mu0 is None or not np.isfinite(A)) else 1.0 - np.exp(-A)
    lhs_all, rhs_all = [], []
    for t in probe_times:
        lhs = u.sample(probes, t) + duhamel_term(u, V, probes, t)
        if mu0 is not None and pre_factor > 0:
            lhs = lhs + pre_factor * heat_potential(mu0, probes, t)
        rhs = heat_potential(candidate, probes, t) if not candidate.is_zero else np.zeros(len(probes))
        lhs_all.append(lhs)
        rhs_all.append(rhs)
    lhs_all, rhs_all = np.array(lhs_all), np.array(rhs_all)
    floor = 1e-2 * max(float(rhs_all.max()), float(lhs_all.max()), 1e-300)
    return float(np.max(np.abs(lhs_all - rhs_all) / (rhs_all + floor)))


# ---------------------------------------------------------------- a-priori estimates

@dataclass
class EstimateReport:
    lhs: float
    rhs: float
    window_part: float
    pre_part: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)


def weighted_estimate(u: Field, V: Potential, mu: Measure) -> EstimateReport:
    """``int_0^T int (n/2T + V) u exp(-|x|^2 / 4(T - t)) dx dt`` against ``int exp(-|y|^2/4T) dmu``.

    Snapshots give the part after ``t0`` (trapezoid in t); before ``t0`` the solution is
    ``exp(-int V) H[mu]`` for space-independent V (Gaussian identity, then quad) and is
    bounded by ``H[mu]`` otherwise (space-time engine).
    """
    g = u.grid
    n, T = g.dim, u.times[-1]
    nodes = g.nodes()
    r2 = np.sum(nodes ** 2, axis=-1)
    w = u.trapezoid_weights()
    dens = []
    for t, v in zip(u.times, u.values):
        if T - t <= 0:
            dens.append(0.0)
            continue
        Vt = V(nodes, t)
        coef = np.where(v > 0, n / (2 * T) + np.where(np.isfinite(Vt), Vt, 0.0), 0.0)
        dens.append(float(np.sum(coef * v * np.exp(-r2 / (4 * (T - t))) * w)))
    window = float(np.trapezoid(dens, u.times))
    t0 = u.t0
    if V.space_independent:
        gauss = mT_norm(mu, T)

        def integrand(t):
            A = V.absorption(0.0, t)
            return (n / (2 * T) + float(V.time_profile(np.array(t)))) * np.exp(-A) * ((T - t) / T) ** (n / 2) * gauss

        pre = quad(integrand, 0.0, t0, limit=200)[0] if np.isfinite(V.absorption(0.0, t0)) else 0.0
    else:
        def f(x, t):
            Vx = V(x, t)
            return (n / (2 * T) + Vx) * heat_potential(mu, x, t) * np.exp(-np.sum(x ** 2, axis=-1) / (4 * (T - t)))

        foci = SpatialFoci(tuple(tuple(p) for p in mu.locations), tuple(tuple(p) for p in V.singular_points()),
                           tuple(tuple(b) for b in V.breakpoints()))
        tr = spacetime_integral(f, g.box, t0, foci, V.time_breaks())
        pre = tr.value if np.isfinite(tr.value) else np.inf
    return EstimateReport(window + pre, mT_norm(mu, T), window, pre)


def bounded_domain_estimate(V: Potential, mu: Measure, grid: GridSpec,
                            control: StepControl = StepControl()) -> dict:
    """Dirichlet problem on ``grid.box``: ``||u||_{L1} + ||V u||_{L1 with weight psi}`` versus ``int d dmu``,
    ``psi`` solving ``-Lap psi = 1`` and ``d`` the distance to the boundary."""
    box = grid.box
    Vs = V if not V.singular_at_zero_time else level_truncate(V, 1e6)
    u = step_solve(Vs, grid, mu, grid.t_min, grid.T, True, snapshot_times(grid, grid.t_min, grid.T, 8),
                   pre_damping(Vs, grid.t_min), control, tag="bounded_domain")
    psi = omega_weight(box, grid.h).values
    nodes = grid.nodes()
    w = u.trapezoid_weights()
    l1, vpsi = [], []
    for t, v in zip(u.times, u.values):
        Vt = V(nodes, t)
        Vt = np.where(np.isfinite(Vt), Vt, 0.0)
        l1.append(float(np.sum(v * w)))
        vpsi.append(float(np.sum(np.where(v > 0, Vt * v, 0.0) * psi * w)))
    lhs = float(np.trapezoid(l1, u.times) + np.trapezoid(vpsi, u.times))
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    dist = lambda p: np.min(np.minimum(p - lo, hi - p), axis=-1)
    rhs = float(np.sum(mu.weights * dist(mu.locations)))
    if mu.density is not None:
        c = mu.density.cell_centers()
        rhs += float(np.sum(mu.density.values.ravel() * np.maximum(dist(c), 0)) * mu.density.h ** mu.dim)
    return {"lhs": lhs, "rhs": rhs, "constant": lhs / rhs if rhs > 0 else np.inf, "field": u}
