#!/usr/bin/env python3
"""Demonstrate the travelling-observable obstruction: on the cyclic
bit-shift model the correlation against the orbit-scheduled observable
stays pinned at 1/2 while every fixed observable's correlation contrast is
bounded by one cell weight.

Usage:
    python3 scripts/counterexample_demo.py [--k-values 1,2,4,8] [--horizon 16]
"""

import argparse
import time

import numpy as np

from cocyclelab.mixing import counterexample_run


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k-values", default="1,2,4,8",
                    help="comma-separated half bit counts")
    ap.add_argument("--horizon", type=int, default=None,
                    help="steps to record (capped at the cell period 2k)")
    args = ap.parse_args(argv)

    header = (f"{'k':>3s} {'cells':>8s} {'steps':>5s} {'travelling':>11s} "
              f"{'overlap':>8s} {'fixed-obs':>10s} {'time':>8s}")
    print(header)
    for k in (int(v) for v in args.k_values.split(",")):
        t0 = time.perf_counter()
        rep = counterexample_run(k, horizon=args.horizon)
        dt = time.perf_counter() - t0
        trav = float(np.max(np.abs(rep.inhom_values[1:] - 0.5)))
        overlap = float(np.max(rep.disjoint_overlaps))
        contrast = float(np.max(rep.hom_contrast_max))
        capped = " (capped)" if rep.horizon_capped else ""
        print(f"{k:3d} {rep.n_cells:8d} {rep.horizon:5d} "
              f"0.5±{trav:.1e} {overlap:8.1e} {contrast:10.2e} "
              f"{dt:7.3f}s{capped}")
    print("\ntravelling column: the orbit-scheduled correlation, exactly 1/2")
    print("fixed-obs column: max pushed mass per cell = one cell weight 1/N")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
