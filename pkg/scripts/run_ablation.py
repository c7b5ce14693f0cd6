#!/usr/bin/env python3
"""Error ladder across pipeline depths, averaged over seeds.

Prints p95 |relative error| per arm and depth and writes the pooled CDFs.
"""

import argparse
import sys
from dataclasses import replace

from causalpair.ablation import ARMS, AblationSpec, cdf_csv, p95_abs, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ap.add_argument("--seeds", type=int, default=2)
    ap.add_argument("--cdf", default="ablation_cdf.csv")
    a = ap.parse_args()

    pooled = {arm: {d: [] for d in a.depths} for arm in ARMS}
    for seed in range(a.seeds):
        spec = AblationSpec(depths=tuple(a.depths))
        spec = replace(spec, workload=replace(spec.workload, seed=seed))
        for arm, per_depth in run_ablation(spec).items():
            for d, errs in per_depth.items():
                pooled[arm][d] += errs
    print(f"{'arm':14s} " + " ".join(f"d={d:<5d}" for d in a.depths))
    for arm in ARMS:
        print(f"{arm:14s} " + " ".join(f"{p95_abs(pooled[arm][d]):7.2f}" for d in a.depths))
    with open(a.cdf, "w") as fh:
        fh.write(cdf_csv(pooled))
    return 0


if __name__ == "__main__":
    sys.exit(main())
