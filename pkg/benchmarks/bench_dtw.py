#!/usr/bin/env python3
"""Compare the compiled DTW kernel against the pure-Python fallback.

Both kernels implement the same anchored dynamic program with
(1,0)/(0,1)/(1,1) steps and diagonal-first tie breaking, so their
costs and paths must agree bitwise; this script verifies that on every
timed input and reports the wall-clock ratio.

Usage: python3 benchmarks/bench_dtw.py [--repeats N] [--sizes 64,128,...]
"""

import argparse
import time

import numpy as np

from melosvc._dtw_py import dtw_alignment as python_kernel

try:
    from melosvc._dtw import dtw_alignment as cython_kernel
except ImportError:
    cython_kernel = None


def time_kernel(kernel, pairs, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        results = [kernel(x, y) for x, y in pairs]
        best = min(best, time.perf_counter() - start)
    return best, results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats, best-of")
    parser.add_argument("--pairs", type=int, default=20, help="contour pairs per size")
    parser.add_argument("--sizes", default="32,64,128,256,512")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if cython_kernel is None:
        print("compiled kernel not built; run pip install -e . first")
        return 1

    rng = np.random.default_rng(args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"{'length':>8} {'python':>12} {'cython':>12} {'speedup':>9}")
    for n in sizes:
        pairs = [
            (rng.standard_normal(n), rng.standard_normal(n))
            for _ in range(args.pairs)
        ]
        t_py, r_py = time_kernel(python_kernel, pairs, args.repeats)
        t_cy, r_cy = time_kernel(cython_kernel, pairs, args.repeats)
        for (c_py, p_py), (c_cy, p_cy) in zip(r_py, r_cy):
            assert c_py == c_cy, f"cost mismatch at n={n}: {c_py} vs {c_cy}"
            assert np.array_equal(np.asarray(p_py), np.asarray(p_cy))
        print(f"{n:>8} {t_py:>11.4f}s {t_cy:>11.4f}s {t_py / t_cy:>8.1f}x")
    print(f"\nagreement verified on {args.pairs} pairs per size (bitwise)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
