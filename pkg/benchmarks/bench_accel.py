"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_accel.py [--repeat N]

Sizes match the benchmark workload: a 1344-point context Gram matrix, a
one-day block (96 slots plus a 24-slot horizon) for the greedy gains and
an 8-episode rollout for GAE. The numba timings exclude compilation.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from frugalsense import _accel


def best_of(fn, repeat):
    fn()  # warm-up, triggers compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    M = rng.normal(size=(1344, 4))
    t = np.arange(1344) / 96.0
    A = rng.normal(size=(120, 120))
    cov = A @ A.T / 120 + np.eye(120)
    cand = np.arange(96)
    span = np.arange(96)
    n = 8 * 96
    r, v, nv = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    d = np.zeros(n)
    d[95::96] = 1.0
    return {
        "combined_gram": lambda f: f(M, M, t, t, 40.0, 0.05, 1, 36.0, 0.14, 1.0, True),
        "fi_after_each": lambda f: f(cov, 0.13, 0.13, cand, span),
        "condition_block": lambda f: f(np.zeros(120), cov.copy(), 7, 1.0, 0.13),
        "gae": lambda f: f(r, v, d, nv, 0.99, 0.95),
    }


def episode_seconds(no_numba: bool) -> float:
    """One test-week greedy-oracle run in a fresh interpreter."""
    code = ("import time\n"
            "from frugalsense import benchmark as bm, gp, policies as pol, timeseries as ts\n"
            "d = bm.synthetic_dataset()\n"
            "ctx = ts.split(d, 1344)[0]\n"
            "p = bm.default_init(ctx.laeq)\n"
            "off, sc = gp.standardization(ctx.features())\n"
            "from dataclasses import replace\n"
            "p = replace(p, input_offset=off, input_scale=sc)\n"
            "pol.greedy_oracle_schedule(d, (1344, 1440), 14, p, ctx)\n"
            "t = time.perf_counter()\n"
            "pol.greedy_oracle_schedule(d, (1344, 2016), 14, p, ctx)\n"
            "print(time.perf_counter() - t)\n")
    env = {"FRUGALSENSE_NO_NUMBA": "1"} if no_numba else {"FRUGALSENSE_NO_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, **env},
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        sys.exit("numba is disabled or missing; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'numpy ms':>10} {'numba ms':>10} {'speed-up':>9}")
    for name, call in cases(rng).items():
        f_np = getattr(_accel, name + "_np")
        f_nb = getattr(_accel, name + "_nb")
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<16} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>8.1f}x")
    if not args.skip_end_to_end:
        a, b = episode_seconds(True), episode_seconds(False)
        print(f"{'oracle week':<16} {1e3 * a:>10.1f} {1e3 * b:>10.1f} {a / b:>8.1f}x")


if __name__ == "__main__":
    main()
