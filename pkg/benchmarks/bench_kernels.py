#!/usr/bin/env python3
"""Benchmark the daily water-balance kernel: numba @njit vs the pure
numpy/Python fallback, on growing batches of synthetic station-years.

Also asserts the two paths agree bit-for-bit, since they execute the same
statement sequence.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from kgmlsm.backend import HAVE_NUMBA
from kgmlsm.kernels import bucket_water_balance_numba, bucket_water_balance_numpy


def synthetic_year(rng):
    doy = np.arange(365, dtype=np.float64)
    tmean = 10 + 12 * np.sin(2 * np.pi * (doy - 100) / 365) + rng.normal(0, 2, 365)
    dtr = np.clip(8 + rng.normal(0, 2, 365), 0.5, None)
    radn = np.clip(13 + 10 * np.sin(2 * np.pi * (doy - 81) / 365), 0.1, None)
    ppt = np.where(rng.random(365) < 0.3, rng.gamma(1.3, 6.0, 365), 0.0)
    return radn, tmean + dtr / 2, tmean - dtr / 2, ppt


def run_batch(kernel, years):
    sm_s = np.empty(365)
    sm_r = np.empty(365)
    acc = 0.0
    for radn, tmax, tmin, ppt in years:
        _, stress, critical = kernel(radn, tmax, tmin, ppt, 0.30, 0.30, 110, 136, sm_s, sm_r)
        acc += stress * critical
    return acc


def main():
    rng = np.random.default_rng(0)
    if not HAVE_NUMBA:
        print("numba not installed; timing the fallback only")

    # agreement check on a handful of years
    if HAVE_NUMBA:
        for _ in range(5):
            year = synthetic_year(rng)
            out_np = np.empty((2, 365))
            out_nb = np.empty((2, 365))
            a = bucket_water_balance_numpy(*year, 0.30, 0.30, 110, 136, out_np[0], out_np[1])
            b = bucket_water_balance_numba(*year, 0.30, 0.30, 110, 136, out_nb[0], out_nb[1])
            assert a == b and np.array_equal(out_np, out_nb), "paths disagree"
        print("bitwise agreement: OK")
        run_batch(bucket_water_balance_numba, [synthetic_year(rng)])  # JIT warmup

    print(f"{'station-years':>14} {'numpy (s)':>12} {'numba (s)':>12} {'speedup':>9}")
    for n in (100, 1000, 5000):
        years = [synthetic_year(rng) for _ in range(n)]
        t0 = time.perf_counter()
        run_batch(bucket_water_balance_numpy, years)
        t_np = time.perf_counter() - t0
        if HAVE_NUMBA:
            t0 = time.perf_counter()
            run_batch(bucket_water_balance_numba, years)
            t_nb = time.perf_counter() - t0
            print(f"{n:>14} {t_np:>12.3f} {t_nb:>12.3f} {t_np / t_nb:>8.1f}x")
        else:
            print(f"{n:>14} {t_np:>12.3f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
