"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are the contractual ones; oracles are closed forms or scipy quadrature.
"""

import numpy as np
import pytest

from heatlab.classify import capacity_compact, capacity_dual_check, probe_grid, psi, singular_scan, thmF_criterion
from heatlab.cli import main
from heatlab.grid import Box, GridSpec
from heatlab.kernel import default_box, heat_kernel, potential_foci, space_integral
from heatlab.measures import Measure
from heatlab.potentials import BoundedBump, Custom, Hardy, Product, TimePower, level_truncate, zero
from heatlab.solver import (comparison_violation, pre_damping, reduce, snapshot_times, solve_exhaustion,
                            solve_level_truncation, solve_time_truncation, step_solve, weighted_estimate)
from heatlab.trace import harnack_audit, initial_trace, representation_check

C = 0.5
V_CT = TimePower(C, 1.0)
V_HALF = TimePower(1.0, 0.5)
BUMP = BoundedBump(1.0, Box((-0.5,), (0.5,)))
D0 = Measure.dirac(0.0)
GRID = GridSpec.default()


def _verdict(capsys, n: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _rel_max(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def _solve(V, mu=D0, grid=GRID, damping=None, per_octave=4):
    damping = pre_damping(V, grid.t_min) if damping is None else damping
    return step_solve(V, grid, mu, grid.t_min, grid.T, times=snapshot_times(grid, grid.t_min, grid.T, per_octave),
                      damping=damping)


def test_01_free_kernel_fidelity(capsys):
    u = step_solve(zero(1), GRID, D0, 0.05, 1.0, times=[1.0])
    err = _rel_max(u.values[-1], heat_kernel(GRID.nodes(), 1.0))
    _verdict(capsys, 1, err <= 0.01, f"free kernel max rel error {err:.2e} (<= 1e-2)")


def test_02_closed_form_singular_solution(capsys):
    t0 = 0.05
    u = step_solve(V_CT, GRID, D0, t0, 1.0, times=[1.0], damping=t0 ** -C)
    err = _rel_max(u.values[-1], 1.0 ** -C * heat_kernel(GRID.nodes(), 1.0))
    _verdict(capsys, 2, err <= 0.01, f"t^-c H[delta_0] max rel error {err:.2e} (<= 1e-2)")


def test_03_level_truncation_law(capsys):
    t = 0.2
    ks = [10.0, 100.0, 1000.0]
    got, errs = [], []
    for k in ks:
        Vk = level_truncate(V_CT, k)
        u = step_solve(Vk, GRID, D0, GRID.t_min, 1.0, times=[t], damping=pre_damping(Vk, GRID.t_min))
        got.append(float(u.sample([[0.0]], t)[0] / heat_kernel(np.zeros((1, 1)), t)[0]))
        want = np.exp(-C) * (k * t / C) ** -C
        errs.append(abs(got[-1] - want) / want)
    slope = float(np.polyfit(np.log(ks), np.log(got), 1)[0])
    ok = max(errs) <= 0.02 and abs(slope + C) <= 0.1 * C
    _verdict(capsys, 3, ok, f"factor rel errors {max(errs):.2e} (<= 2e-2), exponent {slope:.4f} vs {-C} (10%)")


def test_04_reduced_measure_dichotomy(capsys):
    r0 = reduce(V_CT, D0, GRID)
    r1 = reduce(V_HALF, D0, GRID)
    ok = abs(r0.m_star) <= 0.02 and abs(r1.m_star - 1) <= 0.02 and max(r0.drift, r1.drift) <= 0.02
    _verdict(capsys, 4, ok, f"m*(c/t) = {r0.m_star:.4f}, m*(t^-1/2) = {r1.m_star:.4f} (+-0.02), "
                            f"drift {max(r0.drift, r1.drift):.2e} (<= 2e-2)")


def test_05_singular_set_scan(capsys):
    hardy = Hardy(1.0, 2.0, 3)
    rep = singular_scan(hardy, 1.0, [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], local_radii=())
    origin, unit = rep.trails
    # inner integral at the origin: int H(x,t) |x|^-2 dx = 1/(2t)
    box = default_box(3, 1.0)
    foci = potential_foci(hardy, [0.0, 0.0, 0.0], 12.0, box)
    inner = [space_integral(lambda x, s: heat_kernel(x, s) * hardy(x, s), box, t, foci) * 2 * t for t in (0.5, 0.01)]
    power = singular_scan(V_HALF, 1.0, probe_grid(Box.cube(2.0, 1), 0.5), local_radii=())
    n_sing = sum(tr.divergent for tr in power.trails)
    ok = origin.divergent and unit.converged and max(abs(v - 1) for v in inner) <= 1e-3 and n_sing == 0 \
        and all(tr.converged for tr in power.trails)
    _verdict(capsys, 5, ok, f"|x|^-2 origin {origin.verdict}, |x|=1 {unit.verdict}, inner*2t = "
                            f"{inner[0]:.5f}/{inner[1]:.5f}; t^-1/2 singular probes {n_sing}")


def test_06_capacity(capsys):
    sets = [[[0.0]], [[0.0], [1.0], [-2.5]], Box((-1.0,), (1.0,))]
    caps = [capacity_compact(V_HALF, 1.0, E).constants["capacity"] for E in sets]
    dual = capacity_dual_check(V_HALF, 1.0, [[0.0], [1.0]], capacity=caps[1])
    bound = dual.constants["best_bound"]
    ok = all(abs(c - 0.5) <= 1e-4 for c in caps) and bound <= 0.51 and dual.verdict == "pass"
    _verdict(capsys, 6, ok, f"capacities {', '.join(f'{c:.6f}' for c in caps)} (0.5 +- 1e-4), "
                            f"dual upper bound {bound:.5f} (<= 0.51)")


def test_07_psi_and_singularity_criterion(capsys):
    val = psi(V_CT, [0.0], 0.1, 1.0)
    sing = thmF_criterion(V_CT, [0.0], 1.0).verdict
    regular = {b: thmF_criterion(TimePower(1.0, b), [0.0], 1.0).verdict for b in (0.25, 0.5, 0.75, 0.9)}
    ok = abs(val - C * np.log(10)) <= 1e-6 and sing == "singular" and set(regular.values()) == {"not singular"}
    _verdict(capsys, 7, ok, f"psi error {abs(val - C * np.log(10)):.1e} (<= 1e-6), c/t {sing}, "
                            f"beta {sorted(regular)} -> {sorted(set(regular.values()))}")


def test_08_weighted_estimate(capsys):
    ratios = {name: weighted_estimate(_solve(V), V, D0).ratio for name, V in (("t^-1/2", V_HALF), ("bump", BUMP))}
    ok = all(r <= 1.02 for r in ratios.values())
    _verdict(capsys, 8, ok, "lhs/rhs " + ", ".join(f"{k} {v:.4f}" for k, v in ratios.items()) + " (<= 1.02)")


def _catalog():
    ax = np.linspace(-3.0, 3.0, 13)
    ts = np.array([0.0, 0.5, 1.0])
    return {"time_power": V_HALF, "c_over_t": V_CT, "hardy": Hardy(0.5, 0.5, 1),
            "product": Product(1.0, 0.5, 0.5, 1), "bounded_bump": BUMP,
            "custom": Custom([ax], ts, np.outer(np.exp(-ax ** 2), 1 + ts))}


def test_09_monotone_schemes(capsys):
    mu = Measure.from_atoms([(0.3, 1.0)], 1)
    worst, failed = 0.0, []
    for name, V in _catalog().items():
        k = 1e6 if V.singular_at_zero_time else None
        W = V if k is None else level_truncate(V, k)
        u = step_solve(W, GRID, mu, GRID.t_min, 1.0, damping=pre_damping(W, GRID.t_min))
        viol = [solve_exhaustion(V, mu, [1.0, 2.0, 4.0], GRID, k=k).max_violation,
                solve_level_truncation(V, mu, [1e1, 1e2, 1e3], GRID).max_violation,
                solve_time_truncation(V, mu, [0.5, 0.1, 0.02], GRID).max_violation,
                comparison_violation(u, mu)]
        worst = max(worst, max(viol))
        if max(viol) > 1 or u.values.min() < 0:
            failed.append(name)
    _verdict(capsys, 9, not failed, f"{len(_catalog())} potentials, worst excess {worst:.3f} x (1e-6 + 1%) "
                                    f"tolerance, failing: {failed or 'none'}")


def test_10_harnack_audit(capsys):
    g = GridSpec.default(h=0.02, t_min=2.0 ** -8)
    reps = {}
    for name, V, c in (("H", zero(1), 0.0), ("t^-c H[delta_0]", V_CT, C)):
        coarse, fine = (_solve(V, grid=grid, damping=g.t_min ** -c) for grid in (g, g.refined(2)))
        reps[name] = harnack_audit(coarse, refined=fine)
    ok = all(np.isfinite(r.constant) and r.drift <= 0.1 for r in reps.values())
    _verdict(capsys, 10, ok, ", ".join(f"{k}: C={r.constant:.4f} drift {r.drift:.1e}" for k, r in reps.items())
             + " (<= 10%)")


def test_11_representation_envelope(capsys):
    free = representation_check(zero(1), GRID)
    amp = float(np.exp(free.intercept))
    bump = representation_check(BUMP, GRID)
    ok = (abs(free.gamma1 - 0.25) <= 0.05 * 0.25 and abs(amp - (4 * np.pi) ** -0.5) <= 0.05 * (4 * np.pi) ** -0.5
          and bump.verdict == "pass")
    _verdict(capsys, 11, ok, f"V=0 gamma {free.gamma1:.4f} (1/4), amplitude {amp:.4f} "
                             f"({(4 * np.pi) ** -0.5:.4f}); bump envelope {bump.verdict}")


def test_12_trace_extraction(capsys):
    g = GridSpec.default(h=0.01, t_min=2.0 ** -10)
    half = initial_trace(_solve(V_HALF, grid=g), V_HALF)
    mass = half.cell_at([0.0]).mass
    ct = initial_trace(_solve(V_CT, grid=g, damping=g.t_min ** -C), V_CT)
    origin = ct.cell_at([0.0])
    ok = (abs(mass - 1) <= 0.02 and not half.singular and origin.verdict == "singular"
          and abs(origin.exponent + C) <= 0.1 * C)
    _verdict(capsys, 12, ok, f"t^-1/2 atom mass {mass:.4f} (1 +- 0.02), singular cells {len(half.singular)}; "
                             f"c/t origin {origin.verdict}, exponent {origin.exponent:.4f} ({-C} +- 10%)")


def test_13_determinism(capsys, tmp_path):
    trees = []
    for tag in ("first", "second"):
        assert main(["validate", "--output", str(tmp_path / tag)]) == 0
        root = tmp_path / tag / "validate"
        trees.append({p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    ok = trees[0] == trees[1] and len(trees[0]) > 2
    _verdict(capsys, 13, ok, f"validate twice: {len(trees[0])} files, bit-identical {trees[0] == trees[1]}")
