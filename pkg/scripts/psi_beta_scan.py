"""Singularity verdicts from psi(0, t_j) for V = t^-beta across beta.

psi has the closed form (T^(1-beta) - t^(1-beta)) / (1-beta) for beta < 1 and c ln(T/t) for
beta = 1.  The gaps shrink by 2^-(1-beta) per level, so powers close to one are indistinguishable
from the logarithm at the detector's stall threshold; the table shows where that happens.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from heatlab.classify import thmF_criterion
from heatlab.kernel import Tolerances
from heatlab.potentials import TimePower


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--betas", type=float, nargs="+",
                   default=[0.25, 0.5, 0.75, 0.9, 0.93, 0.95, 0.955, 0.96, 0.99, 1.0])
    p.add_argument("--out", type=Path, default=Path("psi_beta_scan.csv"))
    args = p.parse_args()

    stall = Tolerances().ratio_diverge
    rows = []
    for b in args.betas:
        rep = thmF_criterion(TimePower(1.0, b), [0.0], 1.0)
        limit = 1.0 / (1.0 - b) if b < 1 else np.inf
        ratio = 2.0 ** -(1.0 - b)
        rows.append([b, rep.verdict, len(rep.rows), rep.constants["psi_last"], limit, ratio])
        print(f"beta={b:6.3f}  verdict={rep.verdict:13s} levels={len(rep.rows):4d}  "
              f"psi_last={rep.constants['psi_last']:.4f}  limit={limit:.4f}  gap ratio={ratio:.4f}")
    print(f"stall threshold {stall}: powers with 2^-(1-beta) >= {stall}, beta >= {1 + np.log2(stall):.4f}, "
          f"read as logarithmic growth")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "verdict", "levels", "psi_last", "limit", "gap_ratio"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
