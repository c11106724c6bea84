"""Initial trace of computed solutions: regular masses, singular cells and blow-up exponents.

Cases: t^-1/2 with two atoms (trace = the data), and c/t with a Dirac followed back from
H[delta_0] at T (the separable solution t^-c T^c H[delta_0], singular at the origin with exponent -c).
"""

import argparse
from pathlib import Path

import numpy as np

from heatlab.grid import GridSpec
from heatlab.measures import Measure
from heatlab.potentials import TimePower
from heatlab.solver import pre_damping, snapshot_times, step_solve
from heatlab.trace import initial_trace


def run(name, V, mu, damping, grid, out):
    u = step_solve(V, grid, mu, grid.t_min, grid.T, times=snapshot_times(grid, grid.t_min, grid.T, 4),
                   damping=damping)
    tr = initial_trace(u, V)
    tr.write(out / f"trace_{name}.csv", out / "trails")
    print(f"{name}:")
    for c in tr.cells:
        print(f"  cell [{c.box.lo[0]:5.2f}, {c.box.hi[0]:5.2f}]  {c.verdict:12s} mass={c.mass:.5f}  "
              f"exponent={c.exponent:.4f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--c", type=float, default=0.5)
    p.add_argument("--out", type=Path, default=Path("trace_demo"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    g = GridSpec.default(h=0.01, t_min=2.0 ** -10)
    half = TimePower(1.0, 0.5)
    run("time_power_half", half, Measure.from_atoms([(0.0, 0.7), (1.0, 0.4)], 1), pre_damping(half, g.t_min), g,
        args.out)
    ct = TimePower(args.c, 1.0)
    run("c_over_t", ct, Measure.dirac(0.0), float(np.exp(ct.absorption(g.t_min, g.T))), g, args.out)


if __name__ == "__main__":
    main()
