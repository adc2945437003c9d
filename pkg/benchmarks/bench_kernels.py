"""Time the compiled and numpy sampling kernels on the same inputs.

Usage: python3 benchmarks/bench_kernels.py [--size 64] [--repeat 5]
"""
import argparse
import time

import numpy as np

from difform import kernels
from difform.grid import identity_grid


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    n = args.size
    rng = np.random.default_rng(0)
    vol = rng.standard_normal((3, n, n, n))
    coords = (identity_grid((n,) * 3) + rng.uniform(-2, 2, (3, n, n, n))).reshape(3, -1)
    cot = rng.standard_normal((3, coords.shape[1]))

    cases = {
        "sample": lambda b: kernels.sample(vol, coords, False, backend=b),
        "sample+grad": lambda b: kernels.sample(vol, coords, True, backend=b),
        "scatter": lambda b: kernels.scatter(cot, coords, (n, n, n), backend=b),
    }
    backends = kernels.available_backends()
    print(f"grid {n}^3, 3 channels, {coords.shape[1]} points, best of {args.repeat}")
    print(f"{'kernel':<12}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        times = [_time(lambda: fn(b), args.repeat) for b in backends]
        row = f"{name:<12}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)
    if len(backends) > 1:
        a = kernels.sample(vol, coords, True, backend="python")
        b = kernels.sample(vol, coords, True, backend="cython")
        print("max |python - cython| (values, grads):",
              float(np.abs(a[0] - b[0]).max()), float(np.abs(a[1] - b[1]).max()))


if __name__ == "__main__":
    main()
