#!/usr/bin/env python3
"""Paired-gap noise level of a depth-sweep table.

For each depth prints the relative gap between the mean Gaussian and mean
Rademacher MSE, the standard error of that gap estimated from the per-trial
paired differences, and the range of per-trial MSE ratios.

Usage: python scripts/paired_noise.py results/desk/depth-l2/depth-sweep.csv
"""

from __future__ import annotations

import sys
from collections import defaultdict

import numpy as np

from rfquant.dataio import read_csv


def main(path: str) -> None:
    t = read_csv(path)
    mse = defaultdict(dict)
    for kind, L, seed, metric, value in zip(t["weight_kind"], t["L"], t["seed"], t["metric"], t["value"]):
        if metric == "mse":
            mse[(L, kind)][seed] = value
    print(path)
    print(f"{'L':>2} {'gap':>8} {'se':>8} {'gap/se':>7} {'min ratio':>10} {'max ratio':>10}")
    for L in sorted({k[0] for k in mse}):
        g, q = mse[(L, "gaussian")], mse[(L, "rademacher")]
        seeds = sorted(g)
        g = np.array([g[s] for s in seeds])
        q = np.array([q[s] for s in seeds])
        diff = q - g
        gap = abs(diff.mean()) / g.mean()
        se = diff.std(ddof=1) / np.sqrt(diff.size) / g.mean()
        ratio = q / g
        print(f"{L:>2} {gap:8.2%} {se:8.2%} {gap / se:7.2f} {ratio.min():10.3f} {ratio.max():10.3f}")


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit(__doc__)
    main(sys.argv[1])
