"""Space-time engine against an independent oracle for Hardy and product potentials off the origin.

Oracle: |z|^-gamma = Gamma(gamma/2)^-1 int_0^inf s^(gamma/2-1) exp(-s|z|^2) ds turns the Gaussian
average into a one-dimensional integral, nested in scipy's quad over t.
"""

import argparse
import csv
import time
from pathlib import Path

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as Gamma

from heatlab.kernel import kernel_potential_integral
from heatlab.potentials import Hardy, Product


def oracle(g: float, r: float, n: int, beta: float = 0.0, T: float = 1.0) -> float:
    def inner(t):
        v = 2 * t
        f = lambda s: s ** (g / 2 - 1) * (1 + 2 * s * v) ** (-n / 2) * np.exp(-s * r * r / (1 + 2 * s * v))
        return t ** -beta * quad(f, 0, np.inf, limit=400)[0] / Gamma(g / 2)
    return quad(inner, 0, T, limit=200)[0]


CASES = [(1, 0.5, 0.0, 0.0), (1, 0.5, 0.5, 0.5), (2, 1.0, 0.5, 0.0), (2, 1.5, 0.3, 0.0), (2, 1.5, 0.5, 0.5),
         (3, 1.0, 0.5, 0.0), (3, 2.0, 0.5, 0.0), (3, 2.0, 1.0, 0.0)]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("quadrature_accuracy.csv"))
    args = p.parse_args()
    rows = []
    for n, g, r, b in CASES:
        V = Product(1.0, b, g, n) if b else Hardy(1.0, g, n)
        t0 = time.perf_counter()
        tr = kernel_potential_integral(V, [r] + [0.0] * (n - 1), 1.0)
        dt = time.perf_counter() - t0
        o = oracle(g, r, n, b)
        rows.append([n, g, r, b, tr.verdict, tr.value, o, (tr.value - o) / o, dt])
        print(f"n={n} gamma={g:3.1f} |y|={r:3.1f} beta={b:3.1f}  {tr.verdict:10s} engine={tr.value:.7f}  "
              f"oracle={o:.7f}  rel.err={(tr.value - o) / o:+.1e}  {dt:.1f}s")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dim", "gamma", "radius", "beta", "verdict", "engine", "oracle", "rel_error", "seconds"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
