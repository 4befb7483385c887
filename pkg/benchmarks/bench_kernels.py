"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--n 1000000] [--repeat 5] [--end-to-end]

``--end-to-end`` also times ``borrowoc run`` on the shipped configs with and
without ``BORROWOC_DISABLE_JIT=1``.
"""

import argparse
import os
import subprocess
import sys
import tempfile
import time
import timeit

import numpy as np
from scipy.special import ndtri

from borrowoc.kernels import NUMBA_KERNELS, NUMPY_KERNELS


def cases(n, rng):
    w = np.array([0.408, 0.352, 0.04, 0.2])
    m = np.array([-51.0, -46.8, -54.1, -50.0])
    v = np.array([19.9, 7.6, 51.7, 88.0]) ** 2
    one = (np.ones(1), np.array([-50.0]), np.array([8800.0 ** 2]))
    se_t, se_c = 88 / np.sqrt(40), 88 / np.sqrt(20)
    y = rng.normal(-50, 40, n)
    y2 = rng.normal(-50, 40, n)
    return {
        "mixture_posterior_tail": lambda k: k.mixture_posterior_tail(y, w, m, v, se_c, 0.0),
        "control_posterior_tail": lambda k: k.control_posterior_tail(y, y2, *one, w, m, v, se_t, se_c, 0.0),
        "control_critical": lambda k: k.control_critical(y, -50.0, 8800.0 ** 2, w, m, v, se_t, se_c, 0.0,
                                                         0.975, float(ndtri(0.975))),
    }


def end_to_end():
    for name in ("lupus.case2", "crohns.case1"):
        for flag in ("0", "1"):
            env = dict(os.environ, BORROWOC_DISABLE_JIT=flag)
            with tempfile.TemporaryDirectory() as out:
                t0 = time.perf_counter()
                subprocess.run([sys.executable, "-m", "borrowoc", "run", "--config", name, "--out", out],
                               env=env, check=True)
                dt = time.perf_counter() - t0
            print(f"{name:14s} {'numpy' if flag == '1' else 'numba':6s} {dt:8.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}   (n = {args.n})")
    for name, f in cases(args.n, rng).items():
        f(NUMBA_KERNELS)  # compile outside the timing
        a = min(timeit.repeat(lambda: f(NUMBA_KERNELS), number=1, repeat=args.repeat))
        b = min(timeit.repeat(lambda: f(NUMPY_KERNELS), number=1, repeat=args.repeat))
        np.testing.assert_allclose(f(NUMBA_KERNELS), f(NUMPY_KERNELS), rtol=1e-9, atol=1e-9)
        print(f"{name:24s} {1e3 * a:10.1f} {1e3 * b:10.1f} {b / a:8.1f}x")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
