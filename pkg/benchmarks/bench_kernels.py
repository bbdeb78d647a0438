"""Benchmark the numba JIT kernels against the pure-numpy fallback.

Run:  python benchmarks/bench_kernels.py [--repeats N]

Shapes mirror the stages of the desk-scale model (32x32 input, widths
16..128) plus an upsampling case.  The numba path is warmed once per
signature so compile time is excluded.
"""

import argparse
import time

import numpy as np

from dynaconv.kernels import numba_backend, numpy_backend

CASES = [
    # (label, n, cin, cout, h, stride, pad, dil, k, groups)
    ("stem 3->16 @32", 64, 3, 16, 32, 1, 1, 1, 3, 1),
    ("stage A 16->16 @32", 64, 16, 16, 32, 1, 1, 1, 3, 1),
    ("stage B 16->32 s2 @32", 64, 16, 32, 32, 2, 1, 1, 3, 1),
    ("stage C dil3 @16", 64, 32, 64, 16, 1, 3, 3, 3, 1),
    ("stage D k9 @8", 64, 64, 128, 8, 1, 4, 1, 9, 1),
    ("depthwise 64 @16", 64, 64, 64, 16, 1, 1, 1, 3, 64),
]

TCASES = [
    ("frac 32->64 up @16", 32, 32, 32, 16, 2, 1, 1, 3, 1),
]


def timed(fn, *args, repeats=3):
    fn(*args)  # warm-up (JIT compile / cache load)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = ap.parse_args()
    dtype = np.dtype(args.dtype)
    rng = np.random.default_rng(0)

    print(f"{'case':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}  max|diff|")
    for label, n, cin, cout, h, s, p, d, k, g in CASES:
        x = rng.normal(size=(n, cin, h, h)).astype(dtype)
        w = rng.normal(size=(cout, cin // g, k, k)).astype(dtype)
        t_np = timed(numpy_backend.conv2d_fwd, x, w, s, p, d, g, repeats=args.repeats)
        t_nb = timed(numba_backend.conv2d_fwd, x, w, s, p, d, g, repeats=args.repeats)
        diff = np.abs(numpy_backend.conv2d_fwd(x, w, s, p, d, g)
                      - numba_backend.conv2d_fwd(x, w, s, p, d, g)).max()
        print(f"{label:28s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms "
              f"{t_np / t_nb:7.2f}x  {diff:.2e}")
    for label, n, cin, cout, h, s, p, d, k, g in TCASES:
        x = rng.normal(size=(n, cin, h, h)).astype(dtype)
        wt = rng.normal(size=(cin, cout // g, k, k)).astype(dtype)
        oh = 2 * h
        t_np = timed(numpy_backend.tconv2d_fwd, x, wt, s, p, d, oh, oh, g,
                     repeats=args.repeats)
        t_nb = timed(numba_backend.tconv2d_fwd, x, wt, s, p, d, oh, oh, g,
                     repeats=args.repeats)
        diff = np.abs(numpy_backend.tconv2d_fwd(x, wt, s, p, d, oh, oh, g)
                      - numba_backend.tconv2d_fwd(x, wt, s, p, d, oh, oh, g)).max()
        print(f"{label:28s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms "
              f"{t_np / t_nb:7.2f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
