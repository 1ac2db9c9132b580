"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat R]

Each case runs the same ensemble through both backends, checks that they
agree, and prints the best-of-R wall time and the speedup.
"""
import argparse
import time

import numpy as np

from stocon import kernels
from stocon.ensemble import run_ensemble
from stocon.noise import Partition, two_point, uniform
from stocon.scenarios import cubic_additive, linear_random_gain, linear_random_rate, vdp_coupled

CASES = [
    ("gain, 2000 paths x 500 steps", lambda: linear_random_gain(two_point(0.5, 1.5)), [1.0], 500, 2000),
    ("rate, 64 paths T=100", lambda: linear_random_rate(two_point(-2, 0.5), Partition(cell=1.0)),
     [1.0], 100.0, 64),
    ("cubic, 256 paths T=5", lambda: cubic_additive(1.0, 1.0), [1.0], 5.0, 256),
    ("vdp, 8 paths T=20", lambda: vdp_coupled(1.0, 1.0, uniform(0.1, 1.1)), [2.0, 0.0, -1.0, 0.5], 20.0, 8),
]


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'case':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, build, x0, horizon, paths in CASES:
        sysm = build()
        times, results = [], []
        for b in backends:
            t, ens = best_of(lambda: run_ensemble(sysm, x0, horizon, paths, seed=0, backend=b, threads=1),
                             args.repeat)
            times.append(t)
            results.append(ens)
        if len(results) > 1 and not np.allclose(results[0].log_dz, results[1].log_dz, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{label}: backends disagree")
        line = f"{label:34s}" + "".join(f"{t:11.3f}s" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
