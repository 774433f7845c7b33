"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per workload; both backends must agree exactly.
"""

import argparse
import time

import numpy as np

from mmot import _kernels
from mmot.duality import multisets


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def tuple_min_case(points, atoms, width, seed=0):
    rng = np.random.default_rng(seed)
    dxy = rng.random((points, atoms))
    idx = multisets(atoms, width)
    inner = rng.random(len(idx))
    return f"tuple_min P={points} m={atoms} k={width} rows={len(idx)}", (dxy, idx, inner), "tuple_min"


def window_case(n, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.random(n))
    w = rng.random(n)
    return f"window_mass_1d n={n}", (x, w / w.sum(), 0.01), "window_mass_1d"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled_kernels is None:
        print("compiled kernels not built; only the numpy fallback is available")
        return 1
    cases = [
        tuple_min_case(1000, 12, 1),
        tuple_min_case(1000, 15, 2),
        tuple_min_case(3000, 15, 2),
        tuple_min_case(300, 12, 3),
        window_case(10_000),
        window_case(1_000_000),
    ]
    print(f"{'workload':45s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for label, fargs, name in cases:
        tp, out_p = _best_of(lambda: getattr(_kernels.python_kernels, name)(*fargs), args.repeat)
        tc, out_c = _best_of(lambda: getattr(_kernels.compiled_kernels, name)(*fargs), args.repeat)
        same = all(np.array_equal(a, b) for a, b in zip(np.atleast_1d(out_p), np.atleast_1d(out_c))) \
            if isinstance(out_p, tuple) else out_p == out_c
        flag = "" if same else "  MISMATCH"
        print(f"{label:45s} {tp * 1e3:11.3f} {tc * 1e3:12.3f} {tp / tc:8.1f}x{flag}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
