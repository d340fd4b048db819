#!/usr/bin/env python3
"""Per-iteration wall time as a function of N, and full-fit time as a function of R and S."""
import argparse
import time

import numpy as np

from vifa.data import simulate, template
from vifa.trainer import FitConfig, fit


def per_iteration(data, cfg, iters):
    stamps = []
    cfg = FitConfig(**{**cfg.__dict__, "max_iters": iters, "anneal_tau": 10**9})
    fit(data, cfg, callback=lambda t, v: stamps.append(time.perf_counter()))
    return float(np.median(np.diff(stamps)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--full-n", type=int, default=2000, help="sample size for the full-fit timings")
    ap.add_argument("--skip-full", action="store_true")
    args = ap.parse_args()
    gp = template("five-factor")

    print("per-iteration time, M=128 R=2 S=2")
    for n in (int(v) for v in args.sizes.split(",")):
        data = simulate(gp, n, seed=n)
        ms = 1e3 * per_iteration(data, FitConfig(P=5, R=2, S=2), args.iters)
        print(f"  N={n:>7d}  {ms:6.2f} ms")

    if args.skip_full:
        return
    data = simulate(gp, args.full_n, seed=1)
    print(f"full fits at N={args.full_n}")
    for R, S in ((1, 1), (1, 8), (8, 1), (8, 8)):
        t0 = time.perf_counter()
        m = fit(data, FitConfig(P=5, R=R, S=S))
        print(f"  R={R} S={S}  {time.perf_counter() - t0:7.1f} s  {m.iterations_run} iterations")


if __name__ == "__main__":
    main()
