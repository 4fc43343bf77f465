"""Time the numba kernels against the numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

The first numba call per signature compiles (or loads from cache) and is
excluded from the timings.
"""
import argparse
import time

import numpy as np

from deceptlens import kernels
from deceptlens.kernels import numpy_backend

numba_backend = kernels.numba_backend


def timeit(fn, args, repeat):
    fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        fresh = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        t = time.perf_counter()
        fn(*fresh)
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    x = rng.normal(size=(4096, 64))
    y = numpy_backend.softmax_rows(x)
    gy = rng.normal(size=y.shape)
    ln = rng.normal(size=(32, 48, 64))
    xhat, inv = numpy_backend.layer_norm_cols(ln, 1e-5)
    ids = rng.integers(0, 5000, size=200_000)
    rows = rng.normal(size=(ids.size, 48))
    out = np.zeros((5000, 48))
    scores = np.round(rng.normal(size=100_000), 2)
    return {
        "softmax_rows 4096x64": ("softmax_rows", (x,)),
        "softmax_rows_backward 4096x64": ("softmax_rows_backward", (y, gy)),
        "layer_norm_cols 32x48x64": ("layer_norm_cols", (ln, 1e-5)),
        "layer_norm_cols_backward 32x48x64": ("layer_norm_cols_backward", (rng.normal(size=ln.shape), xhat, inv)),
        "scatter_add_rows 200k->5000x48": ("scatter_add_rows", (out, ids, rows)),
        "midranks 100k (ties)": ("midranks", (scores,)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if numba_backend is None:
        print("numba backend unavailable (disabled or not installed); nothing to compare")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, (name, a) in cases(rng).items():
        t_np = timeit(getattr(numpy_backend, name), a, args.repeat)
        t_jit = timeit(getattr(numba_backend, name), a, args.repeat)
        print(f"{label:36s} {1e3 * t_np:10.3f} {1e3 * t_jit:10.3f} {t_np / t_jit:8.2f}x")


if __name__ == "__main__":
    main()
