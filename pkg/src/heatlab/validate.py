"""Built-in oracle suite: every check compares a computed quantity with an independent value.

Independent means closed form or scipy's adaptive quadrature, never the code under test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import quad, simpson
from scipy.special import erf

from .classify import (admissibility, capacity_compact, capacity_dual_check, default_probes, omega_weight, psi,
                       singular_scan, strong_subcritical_sufficient, subcritical_check, thmF_criterion)
from .grid import Box, GridSpec
from .kernel import QuadratureTrail, heat_kernel, heat_potential, kernel_potential_integral
from .measures import DensityGrid, Measure, mT_norm
from .potentials import BoundedBump, Hardy, TimePower, level_truncate, zero
from .solver import (FREE_FLOOR, duhamel_residual, kernel_estimate, pre_damping, reduce, snapshot_times,
                     solve_exhaustion, solve_level_truncation, solve_time_truncation, step_solve)
from .trace import (harnack_audit, initial_trace, representation_check, sweep_trace,
                    trace_lower_bound_check)


@dataclass
class Check:
    name: str
    value: float
    expected: float
    tolerance: float
    passed: bool
    verdict: str = ""
    evidence: list[dict] = field(default_factory=list)
    trail: QuadratureTrail | None = None


def _close(name, value, expected, tol, relative=False, **kw) -> Check:
    err = abs(value - expected) / (abs(expected) if relative else 1.0)
    return Check(name, float(value), float(expected), tol, bool(err <= tol), **kw)


def _profile_rows(x, got, want) -> list[dict]:
    return [{"x": float(a), "computed": float(b), "oracle": float(c)} for a, b, c in zip(x, got, want)]


# ---------------------------------------------------------------- measure and kernel oracles

def check_density_oracles() -> list[Check]:
    # uniform density on [-1, 1]: Gaussian-weighted norm and heat potential against fine-grid Simpson
    mu = Measure(1, density=DensityGrid.uniform(Box((-1.0,), (1.0,)), 0.1))
    y = np.linspace(-1.0, 1.0, 20001)
    norm = simpson(np.exp(-y ** 2 / 4.0), x=y)
    pot = simpson(heat_kernel(y[:, None], 0.25), x=y)
    return [_close("mT_norm_uniform_density", mT_norm(mu, 1.0), norm, 1e-8),
            _close("heat_potential_uniform_density", heat_potential(mu, np.zeros((1, 1)), 0.25)[0], pot, 1e-8)]


def check_semigroup() -> list[Check]:
    # H(., s) * H(., t) = H(., s + t) by Simpson convolution on a fine grid
    y = np.linspace(-20.0, 20.0, 40001)
    s, t = 0.1, 0.3
    pts = np.array([-1.0, 0.0, 0.5, 2.0])
    conv = np.array([simpson(heat_kernel((p - y)[:, None], s) * heat_kernel(y[:, None], t), x=y) for p in pts])
    exact = heat_kernel(pts[:, None], s + t)
    err = float(np.max(np.abs(conv - exact)))
    return [Check("kernel_semigroup", err, 0.0, 1e-6, err <= 1e-6, evidence=_profile_rows(pts, conv, exact))]


# ---------------------------------------------------------------- quadrature oracles

def check_kernel_mass() -> list[Check]:
    out = []
    for t in (1e-3, 0.1, 1.0):
        val = quad(lambda x: float(heat_kernel(np.array([[x]]), t)[0]), -np.inf, np.inf, points=None)[0]
        out.append(_close(f"kernel_mass_t{t:g}", val, 1.0, 1e-8))
    return out


def check_engine_power() -> list[Check]:
    # int_0^T int H(x,t) t^-beta dx dt = T^(1-beta) / (1-beta); diverges for beta = 1
    tr = kernel_potential_integral(TimePower(1.0, 0.5), [0.0], 1.0, label="t^-1/2")
    a = _close("engine_time_power_half", tr.value, 2.0, 1e-4, trail=tr, verdict=tr.verdict)
    tr2 = kernel_potential_integral(TimePower(1.0, 1.0), [0.0], 1.0, label="1/t")
    b = Check("engine_time_power_one_divergent", tr2.value, np.inf, 0.0, tr2.divergent, tr2.verdict, trail=tr2)
    return [a, b]


def check_admissibility() -> list[Check]:
    # atom at 0, cube [-1,1]: int_0^1 t^-1/2 erf(1 / 2 sqrt t) dt
    oracle = quad(lambda t: t ** -0.5 * erf(1 / (2 * np.sqrt(t))), 0, 1, limit=200)[0]
    rep = admissibility(TimePower(1.0, 0.5), Measure.dirac(0.0), 1.0, 1.0)
    tr = rep.trails[0]
    a = _close("admissibility_time_power_half", rep.constants["M_R"], oracle, 1e-3, relative=True,
               trail=tr, verdict=rep.verdict)
    rep2 = admissibility(TimePower(0.5, 1.0), Measure.dirac(0.0), 1.0, 1.0)
    b = Check("admissibility_c_over_t_divergent", rep2.constants["M_R"], np.inf, 0.0,
              rep2.verdict == "divergent", rep2.verdict, trail=rep2.trails[0])
    return [a, b]


def check_subcritical() -> list[Check]:
    V = TimePower(1.0, 0.5)
    rep = subcritical_check(V, 1.0, 1.0)
    dense = subcritical_check(V, 1.0, 1.0, probe_points=default_probes(1.0, 1, 1.0, spacing=3.0 / 8))
    m, m2 = rep.constants["m_R"], dense.constants["m_R"]
    ev = [{"probe_spacing": 0.75, "m_R": m}, {"probe_spacing": 0.375, "m_R": m2}]
    fail = subcritical_check(TimePower(0.5, 1.0), 1.0, 1.0, probe_points=[[0.3]])
    return [Check("subcritical_time_power_half", m, m2, 0.01,
                  rep.verdict == "pass" and dense.verdict == "pass" and abs(m - m2) <= 0.01 * m2,
                  rep.verdict, evidence=ev),
            Check("subcritical_c_over_t_fails", fail.constants["m_R"], np.inf, 0.0, fail.verdict == "fail",
                  fail.verdict, trail=fail.trails[0])]


def check_strong_subcritical() -> list[Check]:
    # local integral at y = 0 scales like lam^(n + 1 - beta)
    beta = 0.5
    rep = strong_subcritical_sufficient(TimePower(1.0, beta), 1.0, [[0.0], [0.7]])
    rows = [r for r in rep.rows if float(r["probe"][0]) == 0.0]
    lam = np.array([r["lambda"] for r in rows])
    val = np.array([r["value"] for r in rows])
    slope = float(np.polyfit(np.log(lam), np.log(val), 1)[0])
    ev = [{"lambda": a, "value": b} for a, b in zip(lam, val)]
    fail = strong_subcritical_sufficient(TimePower(0.5, 1.0), 1.0, [[0.0]])
    return [Check("strong_subcritical_scaling", slope, 2 - beta, 0.01,
                  rep.verdict == "pass" and abs(slope - (2 - beta)) <= 0.01 * (2 - beta), rep.verdict, evidence=ev),
            Check("strong_subcritical_c_over_t_fails", 0.0, 0.0, 0.0, fail.verdict == "fail", fail.verdict,
                  trail=fail.trails[-1])]


def check_hardy_scan() -> list[Check]:
    rep = singular_scan(Hardy(1.0, 2.0, 3), 1.0, [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], local_radii=())
    o, far = rep.trails
    mild = singular_scan(Hardy(1.0, 1.0, 3), 1.0, [[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]], local_radii=())
    ct = singular_scan(TimePower(0.5, 1.0), 1.0, [[0.0], [1.0], [-2.0]], local_radii=())
    ev = [{"probe": i, "divergent": float(tr.divergent)} for i, tr in enumerate(ct.trails)]
    return [Check("hardy_3d_origin_divergent", o.value, np.inf, 0.0, o.divergent, o.verdict, trail=o),
            Check("hardy_3d_unit_convergent", far.value, np.nan, 0.0, far.converged, far.verdict, trail=far),
            Check("hardy_3d_gamma1_no_singular_probe", 0.0, 0.0, 0.0, all(tr.converged for tr in mild.trails),
                  mild.verdict, trail=mild.trails[0]),
            Check("c_over_t_every_probe_singular", float(sum(tr.divergent for tr in ct.trails)), 3.0, 0.0,
                  all(tr.divergent for tr in ct.trails), ct.verdict, evidence=ev)]


def check_capacity() -> list[Check]:
    V = TimePower(1.0, 0.5)
    rep = capacity_compact(V, 1.0, [[0.0], [1.0], [-2.5]])
    cap = rep.constants["capacity"]
    dual = capacity_dual_check(V, 1.0, [[0.0], [1.0]], capacity=cap)
    ct = capacity_compact(TimePower(0.5, 1.0), 1.0, [[0.0], [1.0]])
    ct_dual = capacity_dual_check(TimePower(0.5, 1.0), 1.0, [[0.0]], capacity=0.0)
    return [_close("capacity_time_power_half", cap, 0.5, 1e-4, trail=rep.trails[0], verdict=rep.verdict),
            _close("capacity_dual_bound_time_power_half", dual.constants["best_bound"], 0.5, 0.01,
                   verdict=dual.verdict, trail=dual.trails[0]),
            _close("capacity_c_over_t", ct.constants["capacity"], 0.0, 0.0, verdict=ct.verdict, trail=ct.trails[0]),
            Check("capacity_dual_c_over_t_every_lambda_feasible", ct_dual.constants["best_bound"], 0.0, 0.0,
                  ct_dual.constants["best_bound"] == 0.0 and all(
                      v == "yes" for r in ct_dual.rows for k, v in r.items() if k.startswith("feasible_lam")),
                  ct_dual.verdict, trail=ct_dual.trails[0])]


def check_psi() -> list[Check]:
    c = 0.5
    V = TimePower(c, 1.0)
    val = psi(V, [0.0], 0.1, 1.0)
    a = _close("psi_c_over_t", val, c * np.log(10.0), 1e-6)
    s = thmF_criterion(V, [0.0], 1.0)
    ns = thmF_criterion(TimePower(1.0, 0.5), [0.0], 1.0)
    return [a,
            Check("thmF_c_over_t_singular", 0.0, 0.0, 0.0, s.verdict == "singular", s.verdict, trail=s.trails[-1]),
            Check("thmF_time_power_half_regular", 0.0, 0.0, 0.0, ns.verdict == "not singular", ns.verdict,
                  trail=ns.trails[-1])]


def check_omega_weight() -> list[Check]:
    # -psi'' = 1 on [-1, 1], psi(+-1) = 0: psi = (1 - x^2) / 2, reproduced exactly by second differences
    g = omega_weight(Box((-1.0,), (1.0,)), 0.05)
    x = g.axes[0]
    err = float(np.max(np.abs(g.values - (1 - x ** 2) / 2)))
    return [Check("omega_weight_1d", err, 0.0, 1e-10, err <= 1e-10,
                  evidence=_profile_rows(x, g.values, (1 - x ** 2) / 2))]


# ---------------------------------------------------------------- solver oracles

def check_free_kernel() -> list[Check]:
    g = GridSpec.default()
    u = step_solve(zero(1), g, Measure.dirac(0.0), 0.05, 1.0, times=[1.0])
    x = g.axes()[0]
    exact = heat_kernel(x[:, None], 1.0)
    err = float(np.max(np.abs(u.values[-1] - exact)) / exact.max())
    return [Check("free_kernel_1d", err, 0.0, 0.01, err <= 0.01, evidence=_profile_rows(x, u.values[-1], exact))]


def check_singular_solution() -> list[Check]:
    c = 0.5
    g = GridSpec.default()
    t0 = 0.05
    u = step_solve(TimePower(c, 1.0), g, Measure.dirac(0.0), t0, 1.0, times=[1.0], damping=t0 ** -c)
    x = g.axes()[0]
    exact = heat_kernel(x[:, None], 1.0)
    err = float(np.max(np.abs(u.values[-1] - exact)) / exact.max())
    return [Check("singular_solution_c_over_t", err, 0.0, 0.01, err <= 0.01,
                  evidence=_profile_rows(x, u.values[-1], exact))]


def check_level_law() -> list[Check]:
    c, t = 0.5, 0.2
    V = TimePower(c, 1.0)
    g = GridSpec.default()
    out = []
    for k in (10.0, 100.0, 1000.0):
        Vk = level_truncate(V, k)
        u = step_solve(Vk, g, Measure.dirac(0.0), g.t_min, 1.0, times=[t], damping=pre_damping(Vk, g.t_min))
        got = float(u.sample([[0.0]], t)[0] / heat_kernel(np.zeros((1, 1)), t)[0])
        want = np.exp(-c) * (k * t / c) ** -c
        out.append(_close(f"level_law_k{k:g}", got, want, 0.02, relative=True))
    return out


def check_reduce() -> list[Check]:
    g = GridSpec.default()
    d0 = Measure.dirac(0.0)
    r0 = reduce(TimePower(0.5, 1.0), d0, g)
    r1 = reduce(TimePower(1.0, 0.5), d0, g)
    ev = [{"probe_time": t, "mass": m} for t, m in zip(r1.probe_times, r1.masses)]
    return [_close("reduced_mass_c_over_t", r0.m_star, 0.0, 0.02, verdict=r0.verdict),
            _close("reduced_mass_time_power_half", r1.m_star, 1.0, 0.02, verdict=r1.verdict, evidence=ev),
            Check("reduced_mass_drift", r1.drift, 0.0, 0.02, r1.drift <= 0.02, evidence=ev)]


def check_exhaustion() -> list[Check]:
    # V = 0: growing the box from R = 8 sqrt(T) to 12 sqrt(T) only adds the Gaussian tail beyond 8
    g = GridSpec.default(half_width=12.0)
    sw = solve_exhaustion(zero(1), Measure.dirac(0.0), [8.0, 12.0], g)
    small, big = sw.members
    off = int(round((small.grid.box.lo[0] - big.grid.box.lo[0]) / g.h))
    gap = float(np.max(np.abs(big.values[:, off:off + small.grid.shape[0]] - small.values)))
    # V = t^-1/2: u_R increases with R on the default grid and on its refinement
    V = TimePower(1.0, 0.5)
    base = GridSpec.default()
    viol = [solve_exhaustion(V, Measure.dirac(0.0), [1.0, 2.0, 4.0], gr).max_violation
            for gr in (base, base.refined(2))]
    ev = [{"h": gr.h, "excess": v} for gr, v in zip((base, base.refined(2)), viol)]
    return [Check("exhaustion_free_gap_R8", gap, 0.0, 1e-6, gap <= 1e-6 and sw.max_violation <= 1),
            Check("exhaustion_time_power_half_increasing", max(viol), 0.0, 1.0, max(viol) <= 1, evidence=ev)]


def check_truncation_sweeps() -> list[Check]:
    # V = c/t at (0, T): delta-sweep factor (delta/T)^c, k-sweep factor e^-c (kT/c)^-c
    c, T = 0.5, 1.0
    g = GridSpec.default()
    V = TimePower(c, 1.0)
    d0 = Measure.dirac(0.0)
    H0 = heat_kernel(np.zeros((1, 1)), T)[0]
    deltas, ks = [0.5, 0.1, 0.02], [1e2, 1e4, 1e6]
    sd = solve_time_truncation(V, d0, deltas, g)
    sk = solve_level_truncation(V, d0, ks, g)
    out = []
    for d, m in zip(deltas, sd.members):
        out.append(_close(f"time_truncation_delta{d:g}", m.sample([[0.0]], T)[0] / H0, (d / T) ** c, 0.02,
                          relative=True))
    for k, m in zip(ks, sk.members):
        out.append(_close(f"level_truncation_k{k:g}", m.sample([[0.0]], T)[0] / H0,
                          np.exp(-c) * (k * T / c) ** -c, 0.02, relative=True))
    return out


def check_kernel_estimates() -> list[Check]:
    g = GridSpec.default()
    free = kernel_estimate(zero(1), [0.0], g, 0.1)
    ct = kernel_estimate(TimePower(0.5, 1.0), [0.0], g, 0.1)
    amp = 1.0
    bump = kernel_estimate(BoundedBump(amp, Box((-0.5,), (0.5,))), [0.3], g, 0.1)
    nodes = g.nodes()
    worst = 0.0
    for t, v in zip(bump.field.times, bump.field.values):
        H = heat_kernel(nodes - 0.3, t)
        band = 0.01 * H + FREE_FLOOR * H.max()
        lo = np.exp(-amp * (t - bump.field.t0)) * H - band
        worst = max(worst, float(np.max(v - (H + band)) / H.max()), float(np.max(lo - v) / H.max()))
    return [_close("kernel_estimate_free", free.max_ratio, 1.0, 0.01),
            Check("kernel_estimate_c_over_t", ct.max_ratio, 0.0, 0.01, ct.max_ratio <= 0.01),
            Check("kernel_estimate_bump_bracket", worst, 0.0, 0.0, worst <= 0.0)]


def check_duhamel() -> list[Check]:
    g = GridSpec.default()
    d0 = Measure.dirac(0.0)
    times = snapshot_times(g, g.t_min, 1.0, 4)
    u = step_solve(zero(1), g, d0, g.t_min, 1.0, times=times)
    res = duhamel_residual(u, zero(1), d0)
    V = TimePower(1.0, 0.5)
    w = step_solve(V, g, d0, g.t_min, 1.0, times=times, damping=pre_damping(V, g.t_min))
    res2 = duhamel_residual(w, V, d0)
    return [Check("duhamel_free", res, 0.0, 1e-3, res <= 1e-3),
            Check("duhamel_time_power_half", res2, 0.0, 0.02, res2 <= 0.02)]


def _trace_grid() -> GridSpec:
    return GridSpec.default(h=0.01, t_min=2.0 ** -10)


def check_trace() -> list[Check]:
    g = _trace_grid()
    V = TimePower(1.0, 0.5)
    u = step_solve(V, g, Measure.dirac(0.0), g.t_min, 1.0, times=snapshot_times(g, g.t_min, 1.0, 4),
                   damping=pre_damping(V, g.t_min))
    tr = initial_trace(u, V)
    cell = tr.cell_at([0.0])
    others = max((c.mass for c in tr.cells if c is not cell), default=0.0)
    ev = [{"t": float(t), "mass": float(m)} for t, m in zip(cell.mass_times, cell.masses)]
    lb = trace_lower_bound_check(u, tr, V)
    eq = max(float(np.max(np.abs(a - b)) / a.max()) for a, b in zip(u.values, lb.comparison.values))
    return [_close("trace_unit_atom", cell.mass, 1.0, 0.02, verdict=cell.verdict, evidence=ev, trail=cell.trail),
            Check("trace_other_cells", others, 0.0, 1e-3, others <= 1e-3),
            Check("trace_empty_singular_set", len(tr.singular), 0.0, 0.0, len(tr.singular) == 0),
            Check("trace_lower_bound_equality", eq, 0.0, 0.02, eq <= 0.02, lb.verdict)]


def check_singular_trace() -> list[Check]:
    # u = t^-c H[delta_0] under V = c/t: the origin is singular and every Dirac candidate is swept out
    c = 0.5
    g = _trace_grid()
    V = TimePower(c, 1.0)
    u = step_solve(V, g, Measure.dirac(0.0), g.t_min, 1.0, times=snapshot_times(g, g.t_min, 1.0, 4),
                   damping=g.t_min ** -c)
    tr = initial_trace(u, V)
    lb = trace_lower_bound_check(u, tr, V)
    rep = sweep_trace(u, V, [Measure.dirac(0.0, 0.5), Measure.dirac(0.0)], trace=tr, k_list=(1e2, 1e4, 1e6))
    total = float(rep.gammas[-1].sum())
    return [Check("trace_c_over_t_strict_gap", lb.min_gap, 0.0, 0.0, lb.min_gap > 0, lb.verdict),
            Check("sweep_trace_c_over_t_vanishes", total, 0.0, 0.02, total <= 0.02 and rep.bounded),
            Check("sweep_trace_nested_candidates", float(rep.gammas[0].sum()), total, 0.0, rep.monotone)]


def check_harnack() -> list[Check]:
    # H itself satisfies the inequality with C <= 1; for t^-c H the constant grows with c
    g = GridSpec.default()
    d0 = Measure.dirac(0.0)
    times = snapshot_times(g, g.t_min, 1.0, 4)
    consts = []
    for c in (0.0, 0.25, 0.5, 1.0):
        V = zero(1) if c == 0 else TimePower(c, 1.0)
        u = step_solve(V, g, d0, g.t_min, 1.0, times=times, damping=g.t_min ** -c)
        consts.append(harnack_audit(u).constant)
    ev = [{"c": c, "constant": k} for c, k in zip((0.0, 0.25, 0.5, 1.0), consts)]
    return [Check("harnack_free_kernel", consts[0], 1.0, 0.0, 0 < consts[0] <= 1, evidence=ev),
            Check("harnack_grows_with_c", consts[-1], np.nan, 0.0, bool(np.all(np.diff(consts) > 0)), evidence=ev)]


def check_representation() -> list[Check]:
    g = GridSpec.default()
    rep = representation_check(zero(1), g)
    amp = float(np.exp(rep.intercept))
    bump = representation_check(BoundedBump(1.0, Box((-0.5,), (0.5,))), g)
    out = [_close("representation_gamma", rep.gamma1, 0.25, 0.05, relative=True, verdict=rep.verdict),
           _close("representation_amplitude", amp, (4 * np.pi) ** -0.5, 0.05, relative=True),
           Check("representation_bump", bump.c1, bump.c2, 0.0,
                 bump.verdict == "pass" and 0 < bump.c1 < bump.c2 < np.inf, bump.verdict)]
    for k in (1e2, 1e3, 1e4):
        r = representation_check(TimePower(0.5, 1.0), g, k=k)
        out.append(Check(f"representation_c_over_t_k{k:g}", r.c1, r.c2, 0.0,
                         r.verdict == "pass" and 0 < r.c1 < r.c2 < np.inf, r.verdict,
                         evidence=[{"c1": r.c1, "gamma1": r.gamma1, "c2": r.c2, "gamma2": r.gamma2}]))
    return out


CHECKS: list[Callable[[], list[Check]]] = [
    check_density_oracles, check_semigroup, check_kernel_mass, check_engine_power, check_admissibility,
    check_subcritical, check_strong_subcritical, check_hardy_scan, check_capacity, check_psi,
    check_omega_weight, check_free_kernel, check_singular_solution, check_exhaustion, check_level_law,
    check_truncation_sweeps, check_kernel_estimates, check_reduce, check_duhamel, check_trace,
    check_singular_trace, check_harnack, check_representation,
]


def run_suite(checks=None) -> list[Check]:
    out = []
    for fn in checks or CHECKS:
        out.extend(fn())
    return out


def write_results(results: list[Check], csv_path: str | Path) -> None:
    """Summary CSV with one row per check; each row links to its trail or evidence file."""
    csv_path = Path(csv_path)
    trail_dir = csv_path.parent / "trails"
    trail_dir.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "value", "expected", "tolerance", "verdict", "result", "trail_file"])
        for c in results:
            tfile = f"validate_{c.name}.csv"
            if c.trail is not None:
                c.trail.to_csv(trail_dir / tfile)
            else:
                rows = c.evidence or [{"value": c.value, "expected": c.expected}]
                with open(trail_dir / tfile, "w", newline="") as tf:
                    tw = csv.DictWriter(tf, fieldnames=list(rows[0]))
                    tw.writeheader()
                    tw.writerows({k: repr(float(v)) for k, v in r.items()} for r in rows)
            w.writerow([c.name, repr(c.value), repr(c.expected), repr(c.tolerance), c.verdict,
                        "pass" if c.passed else "fail", f"trails/{tfile}"])
