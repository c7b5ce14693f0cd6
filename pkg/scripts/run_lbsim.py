#!/usr/bin/env python3
"""Latency-aware vs uniform weighting over a range of pool utilizations.

Runs the heterogeneous pool (one server at twice the mean service time) and
the all-fast pool at each utilization and prints the paired p99 reductions.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace

from causalpair.lbsim import LbExperimentSpec, default_servers, run_lb_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--utilizations", type=float, nargs="+", default=[0.6, 0.65, 0.75])
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--duration-s", type=float, default=20.0)
    ap.add_argument("--out", help="write the full JSON report here")
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING)

    hetero = default_servers()
    pools = {"one-slow": hetero, "homogeneous": [hetero[0]] * len(hetero)}
    report = {}
    for name, servers in pools.items():
        spec = LbExperimentSpec(servers=servers, trials=a.trials, duration_ns=int(a.duration_s * 1e9))
        cap = spec.capacity_rps()
        spec = replace(spec, offered_loads=tuple(u * cap for u in a.utilizations))
        res = run_lb_experiment(spec)
        report[name] = res["loads"]
        for load in res["loads"]:
            print(f"{name:12s} util={load['utilization']:.2f} p99 uniform={load['p99_uniform_ns'] / 1e6:.3f}ms "
                  f"aware={load['p99_aware_ns'] / 1e6:.3f}ms reduction={load['reduction_pct']:+.1f}% "
                  f"[{load['reduction_pct_min']:+.1f}, {load['reduction_pct_max']:+.1f}]", flush=True)
    if a.out:
        with open(a.out, "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
