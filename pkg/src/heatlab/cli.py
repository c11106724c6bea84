"""Config-driven experiment harness: ``python -m heatlab <subcommand> --config FILE``.

Exit status: 0 when every verdict is decisive and no self-check failed, 1 on numerical failures
or failed checks (and on inconclusive verdicts unless ``--allow-inconclusive``), 2 on config errors.
The output directory is ``--output``, else ``$HEATLAB_OUTPUT_DIR``, else the config's ``output``;
results go to ``<output>/<subcommand>/`` together with ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .classify import (ClassificationReport, admissibility, capacity_compact, capacity_dual_check,
                       probe_grid, psi_trail, singular_scan, strong_subcritical_sufficient,
                       subcritical_check, thmF_criterion)
from .config import ConfigError, ExperimentConfig
from .grid import Box
from .measures import Measure
from .solver import (Field, SolverError, comparison_violation, duhamel_residual, kernel_estimate,
                     pre_damping, reduce, snapshot_times, solve_exhaustion, solve_level_truncation,
                     solve_time_truncation, step_solve, weighted_estimate)
from .trace import (TRACE_TOL, harnack_audit, initial_trace, representation_check, sweep_trace,
                    trace_lower_bound_check)
from .validate import run_suite, write_results

SUBCOMMANDS = ("classify", "scan", "capacity", "psi", "solve", "reduce", "kernel", "trace", "validate")
ENV_OUTPUT = "HEATLAB_OUTPUT_DIR"

# verdicts that answer the question asked (a classification result, not a malfunction)
_DECISIVE = {"pass", "ok", "converged", "divergent", "singular", "not singular", "regular", "skipped"}


def default_config_path() -> Path:
    return Path(str(resources.files("heatlab") / "data" / "default.cfg"))


def _f(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "yes" if v else "no"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_f(x) for x in np.ravel(v))
    return str(v)


def _table(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[_f(v) for v in r] for r in rows])
    return path


class Outcome:
    """Collects verdicts; single writer of the summary rows."""

    def __init__(self):
        self.rows: list[list] = []

    def add(self, item: str, verdict: str, detail: str = "", link: str = "", check: bool = False) -> None:
        """``check=True`` marks a self-check, where ``fail`` is a failure rather than an answer."""
        if verdict == "inconclusive" or verdict == "no certificate found":
            kind = "inconclusive"
        elif verdict in _DECISIVE or (verdict == "fail" and not check):
            kind = "ok"
        else:
            kind = "failure"
        self.rows.append([item, verdict, kind, detail, link])

    def count(self, kind: str) -> int:
        return sum(r[2] == kind for r in self.rows)


def _report(rep: ClassificationReport, out: Path, name: str, outcome: Outcome, check: bool = False) -> None:
    rep.write(out / f"{name}.csv", out / "trails")
    detail = " ".join(f"{k}={_f(v)}" for k, v in sorted(rep.constants.items()))
    outcome.add(name, rep.verdict, detail, f"{name}.csv", check)


# ---------------------------------------------------------------- subcommands

def run_classify(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, mu, eng = cfg.potential(), cfg.total_variation(), cfg.engine()
    Rs = cfg.R_list or [1.0]
    for R in Rs:
        rep = admissibility(V, mu, R, cfg.T, eng, cfg.workers)
        if rep.verdict == "pass":
            rep.notes.insert(0, "admissible")
        _report(rep, out, f"admissibility_R{R:g}", outcome)
    probes = cfg.probe_array() if cfg.points else None
    _report(subcritical_check(V, Rs[-1], cfg.T, probes, eng, cfg.workers), out, "subcritical", outcome)
    pts = cfg.probe_array() if cfg.points else np.zeros((1, cfg.dim))
    _report(strong_subcritical_sufficient(V, cfg.T, pts, cfg.lambda_levels, config=eng, workers=cfg.workers),
            out, "strong_subcritical", outcome)


def run_scan(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V = cfg.potential()
    probes = cfg.probe_array() if cfg.points else probe_grid(Box.cube(2.0, cfg.dim), 0.5)
    _report(singular_scan(V, cfg.T, probes, config=cfg.engine(), workers=cfg.workers), out, "singular_scan",
            outcome, check=True)


def run_capacity(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, eng = cfg.potential(), cfg.engine()
    sets = cfg.capacity_sets or [[tuple([0.0] * cfg.dim)]]
    for i, E in enumerate(sets):
        cap = capacity_compact(V, cfg.T, E, config=eng, workers=cfg.workers)
        _report(cap, out, f"capacity_set{i}", outcome)
        if cap.verdict == "pass":
            dual = capacity_dual_check(V, cfg.T, E, config=eng, capacity=cap.constants["capacity"])
            _report(dual, out, f"capacity_dual_set{i}", outcome, check=True)


def run_psi(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, eng = cfg.potential(), cfg.engine()
    pts = cfg.psi_points or [tuple([0.0] * cfg.dim)]
    times = [t for t in (cfg.times or [0.1 * cfg.T]) if 0 < t < cfg.T]
    trails, rows = [], []
    for x in pts:
        for t in times:
            tr = psi_trail(V, x, t, cfg.T, config=eng)
            trails.append(tr)
            rows.append({"probe": x, "t": t, "psi": np.inf if tr.divergent else tr.value, "trail_verdict": tr.verdict})
    verdict = "inconclusive" if any(tr.verdict == "inconclusive" for tr in trails) else "pass"
    _report(ClassificationReport("psi", verdict, {"V": V.spec()}, trails, rows), out, "psi", outcome)
    for i, x in enumerate(pts):
        _report(thmF_criterion(V, x, cfg.T, config=eng), out, f"thmF_point{i}", outcome)


def _solve_signed(cfg: ExperimentConfig, V, grid, times):
    pos, neg = cfg.signed_measure()
    parts = []
    for m in (pos, neg):
        if m.is_zero:
            parts.append(None)
            continue
        parts.append(step_solve(V, grid, m, grid.t_min, cfg.T, True, times, pre_damping(V, grid.t_min),
                                cfg.control()))
    return pos, neg, parts


def run_solve(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, grid = cfg.potential(), cfg.grid()
    times = np.unique(np.concatenate([snapshot_times(grid, grid.t_min, cfg.T), [t for t in cfg.times
                                                                               if grid.t_min < t < cfg.T]]))
    pos, neg, (up, un) = _solve_signed(cfg, V, grid, times)
    ref = up if up is not None else un
    values = (up.values if up is not None else 0.0) - (un.values if un is not None else 0.0)
    field_dir = out / "field"
    field_dir.mkdir(parents=True, exist_ok=True)
    signed = Field(grid, ref.times, np.asarray(values) + np.zeros_like(ref.values), ref.absorbed, ref.outflow, V)
    files = signed.write_slices(field_dir, "u")
    rows = []
    for j, t in enumerate(ref.times):
        rows.append([t, signed.mass(j), files[j].relative_to(out).as_posix()])
    _table(out / "solution.csv", ["t", "mass", "trail_file"], rows)
    for name, m, u in (("positive", pos, up), ("negative", neg, un)):
        if u is None:
            continue
        viol = comparison_violation(u, m)
        outcome.add(f"comparison_{name}", "pass" if viol <= 1 else "fail", f"excess={_f(viol)}", "solution.csv",
                    check=True)
        est = weighted_estimate(u, V, m)
        _table(out / f"estimate_{name}.csv", ["lhs", "rhs", "window_part", "pre_part", "ratio", "trail_file"],
               [[est.lhs, est.rhs, est.window_part, est.pre_part, est.ratio, "solution.csv"]])
        outcome.add(f"estimate_{name}", "pass" if est.ratio <= 1.02 else "fail", f"ratio={_f(est.ratio)}",
                    f"estimate_{name}.csv", check=True)
    mu = cfg.measure() if neg.is_zero else None
    if mu is None:
        if cfg.k_list or cfg.delta_list or cfg.R_list:
            outcome.add("sweeps", "skipped", "monotone sweeps need a nonnegative measure")
        return
    sweeps = []
    if cfg.k_list:
        sweeps.append(("level_truncation", lambda: solve_level_truncation(
            V, mu, cfg.k_list, grid, times, True, cfg.control(), cfg.workers)))
    if cfg.delta_list:
        sweeps.append(("time_truncation", lambda: solve_time_truncation(
            V, mu, sorted(cfg.delta_list, reverse=True), grid, times, True, cfg.control(), cfg.workers)))
    if cfg.R_list:
        k = max(cfg.k_list) if (cfg.k_list and V.singular_at_zero_time) else None
        sweeps.append(("exhaustion", lambda: solve_exhaustion(
            V, mu, cfg.R_list, grid, times, k, cfg.control(), cfg.workers)))
    rows = []
    for name, run in sweeps:
        sw = run()
        for p, f in zip(sw.params, sw.members):
            d = field_dir / f"{name}_{p:g}"
            f.write_slices(d, "u")
            rows.append([name, p, sw.max_violation, sw.converged, sw.last_change,
                         (d.relative_to(out) / "u_000.csv").as_posix()])
        outcome.add(f"monotone_{name}", "pass" if sw.max_violation <= 1 else "fail",
                    f"violation={_f(sw.max_violation)} converged={_f(sw.converged)}", "sweeps.csv", check=True)
    if rows:
        _table(out / "sweeps.csv", ["scheme", "param", "max_violation", "converged", "last_change", "trail_file"],
               rows)


def run_reduce(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, grid, mu = cfg.potential(), cfg.grid(), cfg.measure()
    times = snapshot_times(grid, grid.t_min, cfg.T, 4)
    ks = cfg.k_list or [1e2, 1e3, 1e4, 1e5, 1e6]
    red = reduce(V, mu, grid, ks, times=times, drift_tol=0.05, control=cfg.control(), workers=cfg.workers)
    red.u_star.write_slices(out / "u_star", "u")
    rows = [[t, m, f"u_star/u_{red.u_star.index(t):03d}.csv"] for t, m in zip(red.probe_times, red.masses)]
    _table(out / "reduce.csv", ["probe_time", "mass_balance", "trail_file"], rows)
    total = mu.total_mass()
    cand = mu.scaled(red.m_star / total) if red.m_star > 0 and total > 0 else Measure.zero(mu.dim)
    res = duhamel_residual(red.u_star, V, cand)
    _table(out / "summary.csv", ["m_star", "total_mass", "drift", "verdict", "duhamel_residual", "trail_file"],
           [[red.m_star, total, red.drift, red.verdict, res, "reduce.csv"]])
    outcome.add("reduce", red.verdict, f"m_star={_f(red.m_star)} drift={_f(red.drift)}", "summary.csv")


def run_kernel(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, grid = cfg.potential(), cfg.grid()
    y = np.asarray(cfg.kernel_center or [0.0] * cfg.dim, dtype=float)
    k = max(cfg.k_list) if cfg.k_list else 1e6
    ke = kernel_estimate(V, y, grid, cfg.sigma, k, control=cfg.control())
    ke.field.write_slices(out / "kernel", "h")
    outcome.add("kernel_estimate", "pass", f"max_ratio={_f(ke.max_ratio)}", "kernel/h_000.csv", check=True)
    env = representation_check(V, grid, y, cfg.sigma, None if not V.singular_at_zero_time else k)
    _table(out / "representation.csv",
           ["c1", "gamma1", "c2", "gamma2", "slope", "intercept", "probes", "verdict", "witness", "trail_file"],
           [[env.c1, env.gamma1, env.c2, env.gamma2, env.slope, env.intercept, env.probes, env.verdict,
             "" if env.witness is None else str(env.witness), "kernel/h_000.csv"]])
    outcome.add("representation", env.verdict, f"gamma={_f(env.gamma1)}", "representation.csv", check=True)
    fine = kernel_estimate(V, y, grid.refined(), cfg.sigma, k, times=ke.field.times, control=cfg.control())
    hr = harnack_audit(ke.field, refined=fine.field)
    verdict = "pass" if np.isfinite(hr.constant) and hr.drift <= 0.1 else "fail"
    _table(out / "harnack.csv", ["constant", "refined_constant", "drift", "pairs", "verdict", "trail_file"],
           [[hr.constant, hr.refined_constant, hr.drift, hr.pairs, verdict, "kernel/h_000.csv"]])
    outcome.add("harnack", verdict, f"C={_f(hr.constant)} drift={_f(hr.drift)}", "harnack.csv", check=True)


def run_trace(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    V, mu = cfg.potential(), cfg.measure()
    grid = cfg.grid(h=cfg.trace_h, t_min=cfg.trace_t_min)
    times = snapshot_times(grid, grid.t_min, cfg.T, 4)
    damping = pre_damping(V, grid.t_min)
    if damping == 0.0 and V.space_independent:
        # absorption diverges at t = 0: follow the separable solution that equals H[mu] at T
        damping = float(np.exp(V.absorption(grid.t_min, cfg.T)))
    u = step_solve(V, grid, mu, grid.t_min, cfg.T, True, times, damping, cfg.control())
    tol = TRACE_TOL if cfg.trace_rtol == TRACE_TOL.rtol else type(TRACE_TOL)(rtol=cfg.trace_rtol)
    tr = initial_trace(u, V, cfg.trace_sizes, tol=tol)
    tr.write(out / "trace.csv", out / "trails")
    for c in tr.cells:
        if c.verdict == "inconclusive":
            outcome.add(f"cell {_f(c.center)}", "inconclusive", "", "trace.csv")
    outcome.add("trace", "pass", f"regular={len(tr.regular)} singular={len(tr.singular)}", "trace.csv")
    lb = trace_lower_bound_check(u, tr, V, tol=cfg.lower_bound)
    _table(out / "lower_bound.csv", ["max_violation", "min_gap", "verdict", "trail_file"],
           [[lb.max_violation, lb.min_gap, lb.verdict, "trace.csv"]])
    outcome.add("trace_lower_bound", lb.verdict, f"violation={_f(lb.max_violation)}", "lower_bound.csv",
                check=True)
    cands = cfg.candidate_measures()
    if cands:
        sw = sweep_trace(u, V, cands, tr, tol=cfg.lower_bound)
        rows = [[i, j, c.verdict, g[j], m[j], "trace.csv"] for i, (g, m) in enumerate(zip(sw.gammas, sw.mu_masses))
                for j, c in enumerate(sw.cells)]
        _table(out / "sweep.csv", ["candidate", "cell", "cell_verdict", "gamma", "mu_mass", "trail_file"], rows)
        ok = sw.monotone and sw.bounded
        outcome.add("sweep_trace", "pass" if ok else "fail", "; ".join(sw.notes), "sweep.csv", check=True)


def run_validate(cfg: ExperimentConfig, out: Path, outcome: Outcome) -> None:
    results = run_suite()
    write_results(results, out / "validate.csv")
    for c in results:
        outcome.add(c.name, "pass" if c.passed else "fail", f"value={_f(c.value)}", "validate.csv", check=True)


RUNNERS = {"classify": run_classify, "scan": run_scan, "capacity": run_capacity, "psi": run_psi,
           "solve": run_solve, "reduce": run_reduce, "kernel": run_kernel, "trace": run_trace,
           "validate": run_validate}


# ---------------------------------------------------------------- harness

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(cfg: ExperimentConfig, sub: str, out: Path, outcome: Outcome, status: int, error: str) -> dict:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    return {
        "subcommand": sub,
        "config": {"file": cfg.source.name if cfg.source else None,
                   "sha256": hashlib.sha256(cfg.text.encode()).hexdigest(), "text": cfg.text},
        "versions": {"heatlab": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "seeds": {"experiment": cfg.seed},
        "status": status,
        "error": error,
        "counts": {k: outcome.count(k) for k in ("ok", "failure", "inconclusive")},
        "outputs": {p.relative_to(out).as_posix(): _sha256(p) for p in files},
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heatlab", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, default=None, help="experiment config (default: shipped default.cfg)")
    p.add_argument("--output", type=Path, default=None, help="output directory (overrides env and config)")
    p.add_argument("--allow-inconclusive", action="store_true", help="exit 0 despite inconclusive verdicts")
    p.add_argument("--workers", type=int, default=None, help="threads for independent quadratures and sweeps")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config or default_config_path())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.workers is not None:
        cfg.workers = args.workers
    root = args.output or (Path(os.environ[ENV_OUTPUT]) if os.environ.get(ENV_OUTPUT) else cfg.output)
    final = Path(root) / args.subcommand
    fresh_root = not final.parent.exists()
    final.parent.mkdir(parents=True, exist_ok=True)
    # build in a scratch directory so that a crashed run never leaves partial outputs behind
    work = Path(tempfile.mkdtemp(prefix=f".{args.subcommand}-", dir=final.parent))
    outcome = Outcome()
    error = ""
    try:
        RUNNERS[args.subcommand](cfg, work, outcome)
    except ConfigError as exc:
        shutil.rmtree(work)
        if fresh_root:
            shutil.rmtree(final.parent)
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, ValueError, FloatingPointError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        outcome.add(args.subcommand, "error", error, check=True)
    _table(work / "summary_verdicts.csv", ["item", "verdict", "kind", "detail", "trail_file"], outcome.rows)
    failed = outcome.count("failure") > 0
    inconclusive = outcome.count("inconclusive") > 0 and not args.allow_inconclusive
    status = 1 if (failed or inconclusive) else 0
    with open(work / "manifest.json", "w") as fh:
        json.dump(_manifest(cfg, args.subcommand, work, outcome, status, error), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if final.exists():
        shutil.rmtree(final)
    work.rename(final)
    for r in outcome.rows:
        print(f"{r[2]:>12}  {r[0]}: {r[1]} {r[3]}")
    print(f"{args.subcommand}: {outcome.count('ok')} ok, {outcome.count('failure')} failed, "
          f"{outcome.count('inconclusive')} inconclusive -> {final}")
    return status


if __name__ == "__main__":
    sys.exit(main())
