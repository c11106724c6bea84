"""Classification criteria: admissibility, (strong) subcriticality, psi, singular set, capacity."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from .grid import Box
from .kernel import (EngineConfig, QuadratureTrail, SpatialFoci, Tolerances, assess_sequence,
                     combine_trails, heat_kernel, heat_potential, kernel_potential_integral,
                     potential_foci, spacetime_integral, trail_from_sequence)
from .measures import Measure, mT_norm
from .potentials import Potential


def pmap(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map, optionally on a thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class ClassificationReport:
    criterion: str
    verdict: str
    inputs: dict
    trails: list[QuadratureTrail] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def write(self, csv_path: str | Path, trail_dir: str | Path | None = None) -> None:
        """CSV with one row per probe; each row links to the trail file that backs it."""
        csv_path = Path(csv_path)
        trail_dir = Path(trail_dir) if trail_dir is not None else csv_path.parent / "trails"
        trail_dir.mkdir(parents=True, exist_ok=True)
        keys = []
        for r in self.rows:
            keys.extend(k for k in r if k not in keys)
        const_keys = sorted(self.constants)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["criterion", *keys, *const_keys, "report_verdict", "notes", "trail_file"])
            for i, r in enumerate(self.rows):
                tfile = ""
                if i < len(self.trails):
                    tfile = f"{csv_path.stem}_{i:04d}.csv"
                    self.trails[i].to_csv(trail_dir / tfile)
                w.writerow([self.criterion, *[_fmt(r.get(k, "")) for k in keys],
                            *[_fmt(self.constants[k]) for k in const_keys], self.verdict, "; ".join(self.notes),
                            (Path(trail_dir.name) / tfile).as_posix() if tfile else ""])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) for x in v.ravel())
    if isinstance(v, (tuple, list)):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def _points(points, dim: int) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, dim)


# ---------------------------------------------------------------- admissibility

def _density_trail(V: Potential, mu: Measure, box: Box, T: float, config: EngineConfig) -> QuadratureTrail:
    dens = Measure(mu.dim, density=mu.density)
    db = mu.density.box
    foci = potential_foci(V, None, None, box)
    foci = SpatialFoci(centers=(db.lo, db.hi), singular=foci.singular,
                       breaks=tuple(tuple(b) + (l, h) for b, l, h in zip(foci.breaks, db.lo, db.hi)))

    def f(x, t):
        return heat_potential(dens, x, t) * V(x, t)

    return spacetime_integral(f, box, T, foci, V.time_breaks(), config, label="density")


def admissibility(V: Potential, mu: Measure, R: float, T: float,
                  config: EngineConfig = EngineConfig(), workers: int = 1) -> ClassificationReport:
    """``int_0^T int_{[-R,R]^n} H[mu](x,t) V(x,t) dx dt``; finite means admissible on that cylinder."""
    norm = mT_norm(mu, T)
    box = Box.cube(R, mu.dim)
    inputs = {"V": V.spec(), "R": R, "T": T, "mT_norm": norm}
    if mu.is_zero:
        tr = QuadratureTrail.constant(0.0, "zero measure")
        return ClassificationReport("admissibility", "pass", inputs, [tr],
                                    [{"probe": "mu", "value": 0.0, "trail_verdict": "converged"}], {"M_R": 0.0})
    trails = pmap(lambda y: kernel_potential_integral(V, y, T, box, config=config, label=f"atom {tuple(y)}"),
                  list(mu.locations), workers)
    coeffs = list(mu.weights)
    if mu.density is not None:
        trails.append(_density_trail(V, mu, box, T, config))
        coeffs.append(1.0)
    total = combine_trails(trails, coeffs, config.tol, label="admissibility")
    verdict = {"converged": "pass", "divergent": "divergent", "inconclusive": "inconclusive"}[total.verdict]
    notes = ["not admissible"] if total.divergent else []
    rows = [{"probe": "mu", "value": total.value, "trail_verdict": total.verdict}]
    return ClassificationReport("admissibility", verdict, inputs, [total], rows, {"M_R": total.value}, notes)


# ---------------------------------------------------------------- subcriticality

def default_probes(R: float, dim: int, T: float, spacing: float | None = None) -> np.ndarray:
    """Grid over ``[-R', R']^n`` (``R' = R + 2 sqrt(T)``, half-cell offset) plus far-field points."""
    Rp = R + 2 * np.sqrt(T)
    spacing = spacing or Rp / 4
    m = int(np.ceil(2 * Rp / spacing))
    axis = -Rp + spacing * (np.arange(m) + 0.5)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    grid = np.stack([g.ravel() for g in mesh], axis=-1)
    far = np.zeros((2 * dim, dim))
    for d in range(dim):
        far[2 * d, d] = Rp + 4 * np.sqrt(T)
        far[2 * d + 1, d] = -(Rp + 4 * np.sqrt(T))
    return np.vstack([grid, far])


def subcritical_check(V: Potential, R: float, T: float, probe_points=None,
                      config: EngineConfig = EngineConfig(), workers: int = 1) -> ClassificationReport:
    """Weighted ratio ``e^{|y|^2/4T} int_{Q_T^{B_R}} H(x-y,t) V dx dt`` over probes; ``m_R`` is its max."""
    n = V.dim
    probes = default_probes(R, n, T) if probe_points is None else _points(probe_points, n)
    box = Box.cube(R, n)
    trails = pmap(lambda y: kernel_potential_integral(V, y, T, box, config=config, label=f"y={tuple(y)}"),
                  list(probes), workers)
    rows, ratios, witness = [], [], None
    for y, tr in zip(probes, trails):
        weight = np.exp(np.sum(y ** 2) / (4 * T))
        ratio = tr.value * weight if np.isfinite(tr.value) else np.inf
        rows.append({"probe": y, "value": tr.value, "ratio": ratio, "trail_verdict": tr.verdict})
        ratios.append(ratio)
        if tr.divergent and witness is None:
            witness = y
    if witness is not None:
        verdict = "fail"
    elif all(tr.converged for tr in trails):
        verdict = "pass"
    else:
        verdict = "inconclusive"
    m_R = float(np.max(ratios)) if ratios else 0.0
    notes = ["probe set is finite: the bound over all y is a heuristic on grid + far field"]
    if witness is not None:
        notes.append(f"divergent at witness y={tuple(witness)}")
    return ClassificationReport("subcritical", verdict, {"V": V.spec(), "R": R, "T": T, "probes": len(probes)},
                                trails, rows, {"m_R": m_R}, notes)


def local_scaled_integral(V: Potential, y, lam: float, T: float,
                          config: EngineConfig = EngineConfig()) -> QuadratureTrail:
    """``e^{|y|^2/4T} lam^{-n} int_0^lam int_{cube(y, lam^2)} V dx dt`` (cube of half-width lam^2)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.size
    cube = Box.cube(lam ** 2, n, y)
    weight = np.exp(np.sum(y ** 2) / (4 * T)) * lam ** (-n)
    foci = potential_foci(V, None, None, cube)
    tr = spacetime_integral(lambda x, t: weight * V(x, t), cube, lam, foci,
                            V.time_breaks(), config, label=f"y={tuple(y)} lam={lam}")
    return tr


def strong_subcritical_sufficient(V: Potential, T: float, probe_points,
                                  lambda_levels: Sequence[float] = tuple(10.0 ** -np.arange(1, 5)),
                                  tol: float = 1e-3, config: EngineConfig = EngineConfig(),
                                  workers: int = 1) -> ClassificationReport:
    """Sufficient condition for strong subcriticality: the scaled local integral vanishes as lam -> 0."""
    n = V.dim
    probes = _points(probe_points, n)
    lams = np.asarray(lambda_levels, dtype=float)
    if np.any(np.diff(lams) >= 0):
        raise ValueError("lambda levels must decrease")
    jobs = [(y, lam) for y in probes for lam in lams]
    trails = pmap(lambda j: local_scaled_integral(V, j[0], j[1], T, config), jobs, workers)
    rows, verdicts = [], []
    for i, y in enumerate(probes):
        seq = trails[i * len(lams):(i + 1) * len(lams)]
        vals = np.array([tr.value for tr in seq])
        if any(tr.divergent for tr in seq):
            v = "fail"
        elif not all(tr.converged for tr in seq):
            v = "inconclusive"
        else:
            tail = vals[-3:]
            monotone = bool(np.all(np.diff(tail) <= 0))
            if not monotone:
                v = "inconclusive"
            else:
                v = "pass" if tail[-1] < tol else "fail"
        verdicts.append(v)
        for lam, tr in zip(lams, seq):
            rows.append({"probe": y, "lambda": lam, "value": tr.value, "trail_verdict": tr.verdict, "probe_verdict": v})
    verdict = "fail" if "fail" in verdicts else ("inconclusive" if "inconclusive" in verdicts else "pass")
    return ClassificationReport("strong_subcritical", verdict, {"V": V.spec(), "T": T, "lambdas": list(lams)},
                                trails, rows, {"tolerance": tol},
                                ["integration cell is the cube of half-width lam^2, which contains the ball"])


def strong_subcritical_spot_check(V: Potential, T: float, region: Box, cell_sizes: Sequence[float] = (0.2, 0.1, 0.05),
                                  n_sets: int = 3, cells_per_set: int = 3, seed: int = 0,
                                  config: EngineConfig = EngineConfig()) -> ClassificationReport:
    """Randomized check that ``sup_y int_E H(x-y,t) V dx dt`` shrinks with ``|E|``.

    ``E`` is a random union of grid cells of the given size inside ``region``; ``y`` ranges
    over the cell centres of ``E`` (where the kernel mass inside ``E`` is largest).
    """
    rng = np.random.default_rng(seed)
    n = V.dim
    rows, trails, sups = [], [], []
    for size in cell_sizes:
        counts = [max(int(round((h - l) / size)), 1) for l, h in zip(region.lo, region.hi)]
        worst = 0.0
        for s in range(n_sets):
            pick = [tuple(rng.integers(0, c) for c in counts) for _ in range(cells_per_set)]
            cells = [Box(tuple(l + size * i for l, i in zip(region.lo, idx)),
                         tuple(l + size * (i + 1) for l, i in zip(region.lo, idx))) for idx in pick]
            for y in [c.center for c in cells]:
                parts = [kernel_potential_integral(V, y, T, c, config=config) for c in cells]
                tr = combine_trails(parts, tol=config.tol, label=f"size={size} set={s} y={tuple(y)}")
                trails.append(tr)
                worst = max(worst, tr.value if tr.value == tr.value else np.inf)
                rows.append({"cell_size": size, "set": s, "probe": y, "value": tr.value, "trail_verdict": tr.verdict})
        sups.append(worst)
    sups = np.array(sups)
    verdict = "pass" if np.all(np.isfinite(sups)) and np.all(np.diff(sups) < 0) else "fail"
    return ClassificationReport("strong_subcritical_spot", verdict, {"V": V.spec(), "T": T, "seed": seed},
                                trails, rows, {"sup_by_size": " ".join(repr(float(v)) for v in sups)})


# ---------------------------------------------------------------- psi and the singularity criterion

def psi_trail(V: Potential, x, t: float, T: float, inner: str = "auto",
              config: EngineConfig = EngineConfig()) -> QuadratureTrail:
    """``psi(x,t) = int_t^T int H(x-y, s-t) V(y,s) dy ds`` with its evidence trail.

    ``inner='auto'`` uses closed forms (space-independent V, or catalog kernel averages);
    ``inner='quadrature'`` forces the generic space-time engine.
    """
    if not 0 < t < T:
        raise ValueError("psi needs 0 < t < T")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if inner == "auto" and V.space_independent:
        return QuadratureTrail.constant(V.absorption(t, T), "closed form")
    if inner == "auto" and V.has_kernel_average:
        def g(tau):
            return float(V.kernel_average(x, tau, t + tau)[0])
        brk = [d - t for d in V.time_breaks() if t < d < T]
        val, err = quad(g, 0.0, T - t, points=brk or None, limit=400, epsabs=1e-13, epsrel=1e-11)
        return QuadratureTrail([np.nan], [val], "converged", val, err, "kernel average")
    box = Box.cube(8 * np.sqrt(T), x.size, x)
    foci = potential_foci(V, x, 12.0, box)

    def f(y, tau):
        return heat_kernel(y - x, tau) * V(y, t + tau)

    brk = [d - t for d in V.time_breaks() if d > t]
    return spacetime_integral(f, box, T - t, foci, brk, config, label=f"psi x={tuple(x)} t={t}")


def psi(V: Potential, x, t: float, T: float, inner: str = "auto",
        config: EngineConfig = EngineConfig()) -> float:
    """Value of psi; ``+inf`` when the inner trail diverges, ``nan`` when inconclusive."""
    tr = psi_trail(V, x, t, T, inner, config)
    if tr.divergent:
        return np.inf
    return tr.value if tr.converged else np.nan


def thmF_criterion(V: Potential, xi, T: float, levels: int | None = None,
                   config: EngineConfig = EngineConfig()) -> ClassificationReport:
    """Probe ``psi(xi, t_j)`` along ``t_j = T 2^-j``; unbounded growth means ``xi`` is singular.

    ``levels`` defaults to 24, or 1000 when psi is a closed form (space-independent V): power
    laws ``t^-beta`` close to ``beta = 1`` contract by only ``2^-(1-beta)`` per level.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if levels is None:
        levels = 1000 if V.space_independent else 24
    ts, vals = [], []
    verdict = "inconclusive"
    for j in range(1, levels + 1):
        t = T * 0.5 ** j
        ts.append(t)
        vals.append(psi(V, xi, t, T, config=config))
        if np.isnan(vals[-1]):
            break
        v, _, _ = assess_sequence(vals, config.tol)
        if v != "inconclusive":
            verdict = {"converged": "not singular", "divergent": "singular"}[v]
            break
    tr = trail_from_sequence(ts, vals, config.tol, label=f"psi along t_j at {tuple(xi)}")
    notes = ["H_V(., xi, .) vanishes identically"] if verdict == "singular" else []
    rows = [{"probe": xi, "t": t, "psi": v} for t, v in zip(ts, vals)]
    return ClassificationReport("thmF", verdict, {"V": V.spec(), "xi": tuple(xi), "T": T},
                                [tr] * len(rows), rows, {"psi_last": vals[-1]}, notes)


# ---------------------------------------------------------------- singular set

def probe_grid(box: Box, spacing: float) -> np.ndarray:
    """Cell centres of a grid of the given spacing over ``box`` (half-cell offset from the nodes)."""
    axes = []
    for l, h in zip(box.lo, box.hi):
        m = max(int(round((h - l) / spacing)), 1)
        axes.append(l + (h - l) / m * (np.arange(m) + 0.5))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def classification_integral(V: Potential, y, T: float, config: EngineConfig = EngineConfig()) -> QuadratureTrail:
    """``f(y) = int_{Q_T} H(x-y,t) V(x,t) dx dt`` on the box ``y +- 8 sqrt(T)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    box = Box.cube(8 * np.sqrt(T), y.size, y)
    return kernel_potential_integral(V, y, T, box, config=config, label=f"f({tuple(y)})")


def singular_scan(V: Potential, T: float, probe_points, local_radii: Sequence[float] = (1.0, 0.1),
                  config: EngineConfig = EngineConfig(), workers: int = 1) -> ClassificationReport:
    """Per-probe divergence of ``f``; divergent probes are re-checked on shrinking neighbourhoods."""
    probes = _points(probe_points, V.dim)
    trails = pmap(lambda y: classification_integral(V, y, T, config), list(probes), workers)
    rows, local_ok = [], True
    for y, tr in zip(probes, trails):
        row = {"probe": y, "value": tr.value, "trail_verdict": tr.verdict,
               "singular": "yes" if tr.divergent else ("no" if tr.converged else "unknown")}
        if tr.divergent:
            for r in local_radii:
                loc = kernel_potential_integral(V, y, T, Box.cube(r, V.dim, y), config=config)
                row[f"local_r{r:g}"] = loc.verdict
                local_ok &= loc.divergent
        rows.append(row)
    if not local_ok:
        verdict = "fail"
    elif all(tr.verdict != "inconclusive" for tr in trails):
        verdict = "pass"
    else:
        verdict = "inconclusive"
    n_sing = sum(tr.divergent for tr in trails)
    return ClassificationReport("singular_scan", verdict, {"V": V.spec(), "T": T, "probes": len(probes)},
                                trails, rows, {"singular_probes": n_sing})


# ---------------------------------------------------------------- capacity

def _sample_set(E, dim: int, spacing: float) -> np.ndarray:
    if isinstance(E, Box):
        return E.sample(spacing)
    return _points(E, dim)


def capacity_compact(V: Potential, T: float, E, spacing: float = 0.25,
                     config: EngineConfig = EngineConfig(), workers: int = 1) -> ClassificationReport:
    """Capacity of a compact set: ``sup_{y in E} f(y)^{-1}`` with ``f`` the classification integral.

    Zero exactly when every sample lies in the divergent set; a union of sets takes the max.
    """
    pts = _sample_set(E, V.dim, spacing)
    trails = pmap(lambda y: classification_integral(V, y, T, config), list(pts), workers)
    inv = np.array([0.0 if tr.divergent else (1.0 / tr.value if tr.value > 0 else np.inf) for tr in trails])
    rows = [{"probe": y, "value": tr.value, "inverse": c, "trail_verdict": tr.verdict}
            for y, tr, c in zip(pts, trails, inv)]
    if any(tr.verdict == "inconclusive" for tr in trails):
        verdict = "inconclusive"
        cap = np.nan
    else:
        verdict = "pass"
        cap = float(inv.max())
    return ClassificationReport("capacity", verdict, {"V": V.spec(), "T": T, "samples": len(pts)},
                                trails, rows, {"capacity": cap})


def capacity_union(a: ClassificationReport, b: ClassificationReport) -> float:
    return max(a.constants["capacity"], b.constants["capacity"])


@dataclass(frozen=True)
class BoxIndicator:
    """Test function ``f = chi_box`` (sup norm 1), constant in time."""

    box: Box

    sup_norm: float = 1.0

    def __call__(self, x, t):
        return self.box.contains(x).astype(float)


def dual_operator(V: Potential, f, y, T: float, config: EngineConfig = EngineConfig()) -> QuadratureTrail:
    """``H-check[f](y) = int_{Q_T} H(x-y,t) V(x,t) f(x,t) dx dt`` over the support box of ``f``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    box = f.box
    foci = potential_foci(V, y, 12.0, box)
    foci = SpatialFoci(foci.centers, foci.singular,
                       tuple(tuple(b) + (l, h) for b, l, h in zip(foci.breaks, box.lo, box.hi)), foci.window)

    def g(x, t):
        return heat_kernel(x - y, t) * V(x, t) * f(x, t)

    return spacetime_integral(g, box, T, foci, V.time_breaks(), config, label=f"dual y={tuple(y)}")


def capacity_dual_check(V: Potential, T: float, E, f_family: Sequence | None = None,
                        lambdas: Sequence[float] = (1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0),
                        spacing: float = 0.25, config: EngineConfig = EngineConfig(),
                        capacity: float | None = None) -> ClassificationReport:
    """Upper bound for the capacity from feasible test functions ``lam * f`` (``H-check[lam f] >= 1`` on E).

    For each shape ``f`` the smallest feasible multiple gives the bound
    ``||f||_inf / min_E H-check[f]``; the report asserts ``capacity <= best bound``.
    """
    pts = _sample_set(E, V.dim, spacing)
    if f_family is None:
        lo, hi = pts.min(axis=0) - 8 * np.sqrt(T), pts.max(axis=0) + 8 * np.sqrt(T)
        f_family = [BoxIndicator(Box(tuple(lo), tuple(hi)))]
    if capacity is None:
        capacity = capacity_compact(V, T, pts, config=config).constants["capacity"]
    rows, trails, bounds = [], [], []
    for i, f in enumerate(f_family):
        vals, fam_trails = [], []
        for y in pts:
            tr = dual_operator(V, f, y, T, config)
            fam_trails.append(tr)
            vals.append(np.inf if tr.divergent else (tr.value if tr.converged else np.nan))
        vals = np.array(vals)
        m = float(np.min(vals)) if len(vals) else np.nan
        if f.sup_norm == 0 or not m > 0 or np.isnan(m):
            bound = np.nan
        else:
            bound = f.sup_norm / m if np.isfinite(m) else 0.0
        bounds.append(bound)
        # one row per sample point; lam * f is feasible when lam * min_E check >= 1
        for y, v, tr in zip(pts, vals, fam_trails):
            row = {"family": i, "probe": y, "check": v, "trail_verdict": tr.verdict}
            for lam in lambdas:
                row[f"feasible_lam{lam:g}"] = "yes" if (not np.isnan(m) and m * lam >= 1) else "no"
            rows.append(row)
        trails.extend(fam_trails)
    finite = [b for b in bounds if not np.isnan(b)]
    if not finite:
        return ClassificationReport("capacity_dual", "no certificate found", {"V": V.spec(), "T": T},
                                    trails, rows, {"capacity": capacity, "best_bound": np.nan})
    best = min(finite)
    ok = capacity <= best * (1 + 1e-6) + 1e-12
    return ClassificationReport("capacity_dual", "pass" if ok else "fail", {"V": V.spec(), "T": T},
                                trails, rows, {"capacity": capacity, "best_bound": best})


# ---------------------------------------------------------------- bounded-domain weight

@dataclass
class GridFunction:
    axes: list[np.ndarray]
    values: np.ndarray

    def at(self, x) -> np.ndarray:
        interp = RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=0.0)
        return interp(np.asarray(x, dtype=float).reshape(-1, len(self.axes)))


def laplacian_1d(m: int, h: float) -> sp.csr_matrix:
    """Second-difference matrix on ``m`` interior nodes with zero Dirichlet data."""
    return sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="csr") / h ** 2


def omega_weight(box: Box, h: float) -> GridFunction:
    """Solve ``-Lap psi = 1`` in ``box`` with ``psi = 0`` on the boundary (second-order FD, n = 1, 2)."""
    n = box.dim
    if n not in (1, 2):
        raise ValueError("omega_weight supports n = 1, 2")
    counts = [int(round((hi - lo) / h)) for lo, hi in zip(box.lo, box.hi)]
    axes = [lo + h * np.arange(c + 1) for lo, c in zip(box.lo, counts)]
    inner = [c - 1 for c in counts]
    if n == 1:
        A = -laplacian_1d(inner[0], h)
    else:
        I0, I1 = sp.identity(inner[0]), sp.identity(inner[1])
        A = -(sp.kron(laplacian_1d(inner[0], h), I1) + sp.kron(I0, laplacian_1d(inner[1], h)))
    sol = spsolve(A.tocsc(), np.ones(int(np.prod(inner))))
    values = np.zeros([c + 1 for c in counts])
    values[tuple(slice(1, -1) for _ in range(n))] = sol.reshape(inner)
    return GridFunction(axes, values)
