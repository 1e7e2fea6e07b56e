#!/usr/bin/env python3
"""Compare the numba and numpy correlation kernels against the serial oracle.

Usage:
    python benchmarks/bench_correlation.py [--M 2000] [--T 200] [--workers 1,2,4] [--repeat 3]

Each backend result is checked against the oracle before its time is
reported. Timings are the best of ``--repeat`` runs.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from sthd._accel import BACKENDS
from sthd.correlation import naive_pearson, pearson_values


def best_time(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--workers", default="1,2,4")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", action="store_true", help="print one JSON object instead of a table")
    args = ap.parse_args(argv)

    workers = [int(w) for w in args.workers.split(",")]
    x = np.random.default_rng(args.seed).normal(size=(args.M, args.T))

    # compile everything on a tiny input first
    naive_pearson(x[:3, :5])
    for b in BACKENDS:
        pearson_values(x[:3, :5], workers=1, backend=b)

    oracle_time, ref = best_time(lambda: naive_pearson(x), 1)
    rows = []
    for backend in BACKENDS:
        for w in workers:
            t, g = best_time(lambda: pearson_values(x, workers=w, backend=backend), args.repeat)
            err = float(np.max(np.abs(g - ref)))
            rows.append({"backend": backend, "workers": w, "seconds": t, "speedup": oracle_time / t, "max_abs_err": err})

    if args.json:
        print(json.dumps({"M": args.M, "T": args.T, "oracle_seconds": oracle_time, "runs": rows}, indent=2))
        return
    print(f"M={args.M} T={args.T} oracle {oracle_time:.3f}s")
    print(f"{'backend':>8} {'workers':>7} {'seconds':>9} {'speedup':>8} {'max err':>9}")
    for r in rows:
        print(f"{r['backend']:>8} {r['workers']:>7} {r['seconds']:>9.3f} {r['speedup']:>8.2f} {r['max_abs_err']:>9.1e}")


if __name__ == "__main__":
    main()
