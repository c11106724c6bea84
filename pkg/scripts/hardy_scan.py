"""Classification integral of the Hardy potential |x|^-gamma in n dimensions along a ray.

At the origin the inner integral is E|sqrt(2t) Z|^-gamma = Gamma((n-gamma)/2) / (Gamma(n/2) (4t)^(gamma/2)),
so the time integral diverges exactly when gamma >= 2.  Away from the origin it converges for gamma < n.
"""

import argparse
import csv
from pathlib import Path

from heatlab.classify import classification_integral
from heatlab.potentials import Hardy


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--gammas", type=float, nargs="+", default=[1.0, 1.5, 1.9, 2.0, 2.5])
    p.add_argument("--radii", type=float, nargs="+", default=[0.0, 0.25, 1.0])
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--out", type=Path, default=Path("hardy_scan.csv"))
    args = p.parse_args()

    rows = []
    for g in args.gammas:
        V = Hardy(1.0, g, args.dim)
        for r in args.radii:
            y = [r] + [0.0] * (args.dim - 1)
            tr = classification_integral(V, y, args.T)
            rows.append([args.dim, g, r, tr.verdict, tr.value, len(tr.values)])
            print(f"gamma={g:4.2f}  |y|={r:5.2f}  {tr.verdict:12s} value={tr.value:.6g}  levels={len(tr.values)}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "gamma", "radius", "verdict", "value", "levels"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
