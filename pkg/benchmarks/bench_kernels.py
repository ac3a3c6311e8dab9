"""Timing comparison of the two kernel backends.

Runs each hot kernel at a few realistic sizes under both the compiled and
the vectorized-numpy implementation and prints best-of-N wall times plus
the speedup. Invoke directly:

    python3 benchmarks/bench_kernels.py [--repeats 7]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cfalign import kernels


def best_of(fn, repeats: int) -> float:
    fn()  # warm-up; first numba call pays the compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    sizes = ((1_024, 5, 16), (16_384, 8, 16), (131_072, 16, 32))
    for n, c, d in sizes:
        features = rng.normal(size=(n, d))
        centers = rng.normal(size=(c, d))
        labels = rng.integers(-1, c, size=n)
        truth = rng.integers(0, c, size=n)
        pred = rng.integers(0, c, size=n)
        tag = f"n={n:>6} c={c:>2} d={d}"
        yield f"nearest_two   {tag}", lambda f=features, ce=centers: kernels.nearest_two(f, ce)
        yield f"label_sums    {tag}", lambda f=features, l=labels, k=c: kernels.label_sums(f, l, k)
        yield f"confusion     {tag}", lambda t=truth, p=pred, k=c: kernels.confusion(t, p, k)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    if len(backends) == 1:
        print("numba is not importable here; timing the numpy backend only")

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng):
        timings = {}
        for backend in backends:
            kernels.set_backend(backend)
            timings[backend] = best_of(fn, args.repeats)
        rows.append((name, timings))

    width = max(len(name) for name, _ in rows)
    header = f"{'kernel / size'.ljust(width)}  " + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, timings in rows:
        line = name.ljust(width) + "  "
        line += "".join(f"{timings[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{timings['numpy'] / timings['numba']:>9.1f}x"
        print(line)
    kernels.set_backend("auto")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
