"""Benchmark the compiled divergence kernel against the numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--nx 3072] [--ny 1400] [--reps 5]
"""

import argparse
import time

import numpy as np

from svkwave import _stencils_np
from svkwave.fdsolver import backend_name

try:
    from svkwave import _stencils as _compiled
except ImportError:
    _compiled = None


def time_kernel(fn, P, out, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(P, 3.9e-3, 3.9e-3, 1.0, False, out)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--nx", type=int, default=3072)
    ap.add_argument("--ny", type=int, default=1400)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    P = rng.normal(size=(2, args.nx, args.ny + 3)) * 1e-3
    out = np.empty((2, args.nx, args.ny + 1))
    nodes = args.nx * (args.ny + 1)
    print(f"grid {args.nx} x {args.ny + 1} ({nodes / 1e6:.1f}M nodes), "
          f"active backend: {backend_name()}")

    t_np = time_kernel(_stencils_np.divergence, P, out, args.reps)
    print(f"numpy   : {t_np * 1e3:8.1f} ms  ({nodes / t_np / 1e6:7.1f} Mnode/s)")
    if _compiled is None:
        print("compiled: not built")
        return
    t_cy = time_kernel(_compiled.divergence, P, out, args.reps)
    print(f"compiled: {t_cy * 1e3:8.1f} ms  ({nodes / t_cy / 1e6:7.1f} Mnode/s)")
    print(f"speedup : {t_np / t_cy:.1f}x")
    a = _compiled.divergence(P, 3.9e-3, 3.9e-3, 1.0, False)
    b = _stencils_np.divergence(P, 3.9e-3, 3.9e-3, 1.0, False)
    print(f"agreement: {np.max(np.abs(np.asarray(a) - b)) / np.max(np.abs(b)):.2e} rel")


if __name__ == "__main__":
    main()
