"""Initial traces of computed solutions, Harnack audit, representation envelope, sweeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .classify import psi
from .grid import Box, GridSpec
from .kernel import QuadratureTrail, Tolerances, assess_sequence, heat_kernel, trail_from_sequence
from .measures import Measure, restrict
from .potentials import Potential, level_truncate
from .solver import Field, kernel_estimate, pre_damping, reduce, snapshot_times, step_solve

# PDE fields reach only t_min ~ 1e-3, so trails are shorter than quadrature trails; the
# geometric tail extrapolation carries the remainder and the gap test is looser.
TRACE_TOL = Tolerances(rtol=0.1)


@dataclass
class Cell:
    box: Box
    size: float
    verdict: str                 # regular / singular / inconclusive
    mass: float                  # extrapolated trace mass (regular cells)
    trail: QuadratureTrail       # int_eps^T int_U V u, eps decreasing
    mass_times: np.ndarray
    masses: np.ndarray           # int_U u(., t) at mass_times
    exponent: float = np.nan     # fitted d ln(mass) / d ln t near t = 0

    @property
    def center(self) -> np.ndarray:
        return self.box.center


@dataclass
class TraceReport:
    cells: list[Cell]
    sizes: tuple[float, ...]
    by_size: dict = field(default_factory=dict)   # size -> list of cells (same centres)

    @property
    def regular(self) -> list[Cell]:
        return [c for c in self.cells if c.verdict == "regular"]

    @property
    def singular(self) -> list[Cell]:
        return [c for c in self.cells if c.verdict == "singular"]

    @property
    def inconclusive(self) -> list[Cell]:
        return [c for c in self.cells if c.verdict == "inconclusive"]

    def cell_at(self, point) -> Cell:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        for c in self.cells:
            if c.box.contains(p)[0]:
                return c
        raise KeyError(f"no scanned cell contains {tuple(p)}")

    def trace_measure(self, min_mass: float = 0.0) -> Measure:
        """Regular part as atoms at cell centres."""
        dim = self.cells[0].box.dim
        rows = [(*c.center, c.mass) for c in self.regular if c.mass > min_mass]
        return Measure.from_atoms(rows, dim) if rows else Measure.zero(dim)

    def write(self, path: str | Path, trail_dir: str | Path | None = None) -> None:
        path = Path(path)
        trail_dir = Path(trail_dir) if trail_dir is not None else path.parent / "trails"
        trail_dir.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell", "lo", "hi", "size", "verdict", "mass", "exponent", "trail_file"])
            for i, c in enumerate(self.cells):
                name = f"{path.stem}_{i:04d}.csv"
                c.trail.to_csv(trail_dir / name)
                w.writerow([i, " ".join(repr(v) for v in c.box.lo), " ".join(repr(v) for v in c.box.hi),
                            repr(c.size), c.verdict, repr(float(c.mass)), repr(float(c.exponent)),
                            (Path(trail_dir.name) / name).as_posix()])


def _axis_overlap(axis: np.ndarray, h: float, lo: float, hi: float) -> np.ndarray:
    """Length of ``[x - h/2, x + h/2] ∩ [lo, hi]`` for every node ``x`` (cell boundaries on nodes give 1/2)."""
    return np.clip(np.minimum(axis + h / 2, hi) - np.maximum(axis - h / 2, lo), 0.0, None)


def cell_weights(grid: GridSpec, box: Box) -> np.ndarray:
    w = np.ones(grid.shape)
    for d, ax in enumerate(grid.axes()):
        ov = _axis_overlap(ax, grid.h, box.lo[d], box.hi[d])
        shape = [1] * grid.dim
        shape[d] = -1
        w = w * ov.reshape(shape)
    return w


def _level_indices(times: np.ndarray, ratio: float = 0.5) -> list[int]:
    """Snapshot indices of the levels ``T ratio^j`` present among the snapshots (descending t)."""
    T = times[-1]
    out = []
    for j in range(0, 200):
        t = T * ratio ** j
        if t < times[0] * (1 - 1e-12):
            break
        k = int(np.argmin(np.abs(times - t)))
        if np.isclose(times[k], t, rtol=1e-9):
            out.append(k)
    return out


def _aitken(m: np.ndarray) -> float:
    """Delta-squared extrapolation of the last three values (ordered toward t -> 0)."""
    a, b, c = m[-3:]
    den = (c - b) - (b - a)
    if abs(den) < 1e-14 * max(abs(c), 1e-300) or (c - b) * (b - a) <= 0 or abs(c - b) >= abs(b - a):
        return max(float(c), 0.0)
    return max(float(c - (c - b) ** 2 / den), 0.0)


def _cell_scan(u: Field, V: Potential, box: Box, size: float, levels: list[int], tol: Tolerances) -> Cell:
    w = cell_weights(u.grid, box)
    nodes = u.grid.nodes()
    masses, dens = [], []
    for t, v in zip(u.times, u.values):
        Vt = V(nodes, t)
        Vu = np.where(v > 0, np.where(np.isfinite(Vt), Vt, 0.0) * v, 0.0)
        masses.append(float(np.sum(v * w)))
        dens.append(float(np.sum(Vu * w)))
    masses, dens = np.array(masses), np.array(dens)
    ts = u.times
    # partial integrals int_{eps_l}^T, trapezoid in ln t over all snapshots in the range
    g = dens * ts
    lt = np.log(ts)
    eps, vals = [], []
    for k in levels[1:]:
        vals.append(float(np.trapezoid(g[k:], lt[k:])))
        eps.append(float(ts[k]))
    trail = trail_from_sequence(eps, vals, tol, label=f"cell {box.lo}-{box.hi}")
    m_levels = masses[levels]                   # ordered toward t -> 0
    if trail.converged:
        verdict, mass = "regular", _aitken(m_levels) if len(m_levels) >= 3 else float(m_levels[-1])
    elif trail.divergent:
        verdict, mass = "singular", np.inf
    else:
        verdict, mass = "inconclusive", np.nan
    exponent = np.nan
    # cells the solution has not reached carry round-off masses; no fit there
    tail = [k for k in levels[-4:] if masses[k] > 1e-10]
    if len(tail) >= 3:
        exponent = float(np.polyfit(np.log(ts[tail]), np.log(masses[tail]), 1)[0])
    return Cell(box, size, verdict, mass, trail, ts[levels], m_levels, exponent)


def initial_trace(u: Field, V: Potential, sizes: Sequence[float] = (1.0, 0.5), region: Box | None = None,
                  tol: Tolerances = TRACE_TOL) -> TraceReport:
    """Direct trace: per cell ``U`` decide finiteness of ``int int_{Q^U} V u`` along the dyadic levels.

    Cells of the first size are centred at multiples of it inside ``region``; a cell is singular
    when the concentric cells of every size diverge, regular when the first-size cell converges.
    """
    grid = u.grid
    if region is None:
        half = min(2.0, 0.5 * min(h - l for l, h in zip(grid.box.lo, grid.box.hi)) - sizes[0])
        region = Box.cube(half, grid.dim)
    levels = _level_indices(u.times)
    if len(levels) < 4:
        raise ValueError("field needs snapshots at four or more dyadic levels T 2^-j")
    s0 = sizes[0]
    axes = []
    for l, h in zip(region.lo, region.hi):
        k = np.arange(np.ceil(l / s0 - 1e-9), np.floor(h / s0 + 1e-9) + 1)
        axes.append(k * s0)
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=-1)
    cells, by_size = [], {s: [] for s in sizes}
    for c in centers:
        scans = [_cell_scan(u, V, Box.cube(s / 2, grid.dim, c), s, levels, tol) for s in sizes]
        for s, sc in zip(sizes, scans):
            by_size[s].append(sc)
        primary = scans[0]
        if all(sc.verdict == "singular" for sc in scans):
            verdict = "singular"
        elif primary.verdict == "regular":
            verdict = "regular"
        else:
            verdict = "inconclusive"
        if verdict == "singular" and not (primary.exponent < 0 or _unbounded(primary.masses)):
            verdict = "inconclusive"
        primary.verdict = verdict
        cells.append(primary)
    return TraceReport(cells, tuple(sizes), by_size)


def _unbounded(masses: np.ndarray) -> bool:
    tail = masses[-3:]
    return len(tail) == 3 and bool(np.all(np.diff(tail) > 0))


# ---------------------------------------------------------------- lower bound by the regular trace

@dataclass
class LowerBoundReport:
    verdict: str
    max_violation: float        # max (u_{mu_u} - u) / max u over snapshots
    min_gap: float              # min (u - u_{mu_u}) / max u at probes near singular cells
    trace_measure: Measure
    comparison: Field


def trace_lower_bound_check(u: Field, trace: TraceReport, V: Potential, k: float = 1e6,
                            tol: float = 0.02) -> LowerBoundReport:
    """Solve with the regular trace as data and check ``u >= u_{mu_u}`` up to ``tol``."""
    mu_u = trace.trace_measure(min_mass=1e-12)
    grid = u.grid
    Vk = level_truncate(V, k)
    if mu_u.is_zero:
        w = Field(grid, u.times, np.zeros_like(u.values), np.zeros(len(u.times)), np.zeros(len(u.times)), Vk)
    else:
        w = step_solve(Vk, grid, mu_u, u.t0, u.times[-1], True, u.times, pre_damping(Vk, u.t0),
                       tag="trace lower bound")
    worst, gap = -np.inf, np.inf
    near = np.zeros(grid.shape, dtype=bool)
    for c in trace.singular:
        near |= cell_weights(grid, c.box) > 0
    for a, b in zip(u.values, w.values):
        scale = max(float(a.max()), 1e-300)
        worst = max(worst, float(np.max(b - a)) / scale)
        if near.any():
            gap = min(gap, float(np.max((a - b)[near])) / scale)
    verdict = "pass" if worst <= tol else "fail"
    return LowerBoundReport(verdict, worst, gap, mu_u, w)


# ---------------------------------------------------------------- Harnack audit

@dataclass
class HarnackReport:
    constant: float
    pairs: int
    worst_pair: tuple
    refined_constant: float = np.nan

    @property
    def drift(self) -> float:
        if np.isnan(self.refined_constant):
            return np.nan
        return abs(self.refined_constant - self.constant) / max(self.constant, 1e-300)


def default_harnack_probes(u: Field, n_points: int = 9, spread: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    T = u.times[-1]
    xs = np.linspace(-spread, spread, n_points) * np.sqrt(T)
    pts = np.zeros((n_points, u.grid.dim))
    pts[:, 0] = xs
    levels = _level_indices(u.times)
    times = u.times[sorted(levels)]
    return pts, times[times >= 4 * u.t0]


def harnack_constant(u: Field, points: np.ndarray, times: np.ndarray, floor: float = 1e-3) -> tuple[float, int, tuple]:
    """Minimal ``C`` with ``u(y,s) <= u(x,t) exp(C (|x-y|^2/(t-s) + t/s + 1))`` over probe pairs ``s < t``."""
    vals = {float(t): u.sample(points, t) for t in times}
    best, count, worst = 0.0, 0, ()
    for s in times:
        for t in times:
            if not t > s:
                continue
            us, ut = vals[float(s)], vals[float(t)]
            ok_s = us >= floor * us.max()
            ok_t = ut >= floor * ut.max()
            for i in np.nonzero(ok_s)[0]:
                for j in np.nonzero(ok_t)[0]:
                    d2 = float(np.sum((points[j] - points[i]) ** 2))
                    denom = d2 / (t - s) + t / s + 1.0
                    c = max(0.0, float(np.log(us[i] / ut[j]))) / denom
                    count += 1
                    if c > best:
                        best, worst = c, (tuple(points[i]), float(s), tuple(points[j]), float(t))
    return best, count, worst


def harnack_audit(u: Field, C1: float | None = None, refined: Field | None = None,
                  points: np.ndarray | None = None, times: np.ndarray | None = None) -> HarnackReport:
    """Audit the Harnack inequality on probe pairs; with ``refined`` also report grid drift.

    ``C1`` (the bound ``V <= C1/t``) is recorded by the caller; the audit itself is model free.
    """
    if points is None or times is None:
        p, t = default_harnack_probes(u)
        points = p if points is None else points
        times = t if times is None else times
    c, count, worst = harnack_constant(u, points, times)
    rep = HarnackReport(c, count, worst)
    if refined is not None:
        rep.refined_constant = harnack_constant(refined, points, times)[0]
    return rep


# ---------------------------------------------------------------- representation envelope

@dataclass
class EnvelopeReport:
    verdict: str
    c1: float
    gamma1: float
    c2: float
    gamma2: float
    slope: float
    intercept: float
    probes: int
    witness: tuple | None
    potential: str


def representation_check(V: Potential, grid: GridSpec, y=None, sigma: float | None = None, k: float | None = None,
                         slack: float = 0.02, offsets: Sequence[float] = (0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4)) -> EnvelopeReport:
    """Fit ``c t^{-n/2} exp(-gamma |x-y|^2/t)`` to ``exp(-psi) H_V`` and check the two-sided envelope.

    The regression and the envelope (extreme residuals widened by ``slack`` in log scale) use the
    probes at ``offsets``; the envelope must also hold at the held-out midpoints between them.
    """
    n = grid.dim
    y = np.zeros(n) if y is None else np.atleast_1d(np.asarray(y, dtype=float))
    sigma = sigma or max(5 * grid.h, 0.1)
    W = V if k is None else level_truncate(V, k)
    ke = kernel_estimate(V, y, grid, sigma, k=np.inf if k is None else k)
    f = ke.field
    times = [t for t in f.times[_level_indices(f.times)] if t >= 4 * sigma ** 2]
    offsets = np.asarray(offsets, dtype=float)
    held = 0.5 * (offsets[1:] + offsets[:-1])
    xi, z, meta, train = [], [], [], []
    direction = np.zeros(n)
    direction[0] = 1.0
    for t in sorted(times):
        for group, offs in ((True, offsets), (False, held)):
            pts = y + np.outer(offs * np.sqrt(t), direction)
            hv = f.sample(pts, t)
            for p, h in zip(pts, hv):
                if h <= 0:
                    continue
                ps = psi(W, p, t, grid.T) if t < grid.T else 0.0
                xi.append(float(np.sum((p - y) ** 2)) / t)
                z.append(float(np.log(t ** (n / 2) * h) - ps))
                meta.append((tuple(float(c) for c in p), float(t)))
                train.append(group)
    xi, z, train = np.array(xi), np.array(z), np.array(train)
    slope, intercept = np.polyfit(xi[train], z[train], 1)
    resid = z - (intercept + slope * xi)
    lo = resid[train].min() - slack
    hi = resid[train].max() + slack
    bad = np.nonzero((resid < lo) | (resid > hi))[0]
    gamma = -float(slope)
    report = EnvelopeReport("pass" if len(bad) == 0 else "fail", float(np.exp(intercept + lo)), gamma,
                            float(np.exp(intercept + hi)), gamma, float(slope), float(intercept), len(z),
                            meta[bad[0]] if len(bad) else None, W.spec())
    return report


# ---------------------------------------------------------------- sweeping

@dataclass
class SweepTraceReport:
    empty: bool
    gammas: list[np.ndarray]        # per candidate: gamma_u(mu) mass per scanned cell
    mu_masses: list[np.ndarray]     # per candidate: mu mass per scanned cell
    star_masses: list[float]
    nu_S: np.ndarray                # finite-family lower bound of the extended trace on S(u)
    cells: list[Cell]
    monotone: bool
    bounded: bool
    notes: list[str] = field(default_factory=list)


def _dominated(a: Measure, b: Measure) -> bool:
    """``a <= b`` for atomic measures (every atom of ``a`` sits on an atom of ``b`` with larger weight)."""
    if a.density is not None or b.density is not None:
        return False
    for loc, w in zip(a.locations, a.weights):
        hit = np.all(np.isclose(b.locations, loc), axis=1)
        if not hit.any() or b.weights[hit].sum() < w * (1 - 1e-12):
            return False
    return True


def sweep_trace(u: Field, V: Potential, candidates: Sequence[Measure], trace: TraceReport | None = None,
                k_list: Sequence[float] = (1e2, 1e3, 1e4, 1e5, 1e6), tol: float = 0.02) -> SweepTraceReport:
    """Sweeping trace: ``gamma_u(mu)`` = trace of ``min(u, u_{mu*})`` for each candidate on ``S(u)``."""
    trace = initial_trace(u, V) if trace is None else trace
    sing = trace.singular
    cells = trace.cells
    if not sing:
        zero = np.zeros(len(cells))
        return SweepTraceReport(True, [], [], [], zero, cells, True, True,
                                ["singular set empty: extended trace equals the regular trace"])
    for mu in candidates:
        pts = list(mu.locations)
        if mu.density is not None:
            b = mu.density.box
            pts += [np.array(b.lo), np.array(b.hi)]
        for p in pts:
            if not any(c.box.contains(p, tol=1e-12)[0] for c in sing):
                raise ValueError(f"candidate not supported in the singular set: point {tuple(map(float, p))}")
    gammas, mu_masses, stars = [], [], []
    grid = u.grid
    levels = _level_indices(u.times)
    for mu in candidates:
        red = reduce(V, mu, grid, k_list, times=u.times)
        ustar = red.u_star
        v = np.minimum(u.values, ustar.values)
        # v <= H[mu] has bounded mass, so its trace is the cell-mass limit without a V-weighted gate
        gammas.append(np.array([_mass_limit(v, cell_weights(grid, c.box), levels) for c in cells]))
        mu_masses.append(np.array([restrict(mu, c.box).total_mass() for c in cells]))
        stars.append(red.m_star)
    total = max(max(m.sum() for m in mu_masses), 1e-300)
    bounded = all(np.all(g <= m + tol * total) for g, m in zip(gammas, mu_masses))
    monotone = True
    for i, a in enumerate(candidates):
        for j, b in enumerate(candidates):
            if i != j and _dominated(a, b):
                monotone &= bool(np.all(gammas[i] <= gammas[j] + tol * total))
    nu = np.max(np.array(gammas), axis=0)
    notes = ["nu_S is the maximum over the supplied candidates: a finite-family lower bound of the supremum"]
    return SweepTraceReport(False, gammas, mu_masses, stars, nu, cells, monotone, bounded, notes)


def _mass_limit(values: np.ndarray, w: np.ndarray, levels: list[int]) -> float:
    m = np.array([float(np.sum(values[k] * w)) for k in levels])
    return _aitken(m) if len(m) >= 3 else float(m[-1])
