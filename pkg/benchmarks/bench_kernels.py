"""Benchmark the compiled kernel backend against the numpy fallback.

Runs each hot kernel (conv2d forward/backward, maxpool, avgpool) on a few
representative shapes, times both backends, and checks that their outputs
agree to floating-point tolerance. Usage:

    python benchmarks/bench_kernels.py [--repeats 5] [--dtype float32]
"""

import argparse
import time

import numpy as np

from quicknet.kernels import available_backends, get_backend

CASES = [
    # (name, n, cin, h, w, cout, k, stride, pad)
    ("conv 8x1x28x28 -> 8", 8, 1, 28, 28, 8, 3, 1, 1),
    ("conv 32x8x14x14 -> 16", 32, 8, 14, 14, 16, 3, 1, 1),
    ("conv 16x16x16x16 -> 32", 16, 16, 16, 16, 32, 3, 1, 1),
]

POOL_CASES = [
    # (name, n, c, h, w, k)
    ("pool 32x8x28x28 /2", 32, 8, 28, 28, 2),
    ("pool 16x16x16x16 /2", 16, 16, 16, 16, 2),
]


def timeit(fn, repeats):
    """Best-of-repeats wall time in seconds."""
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-4, atol=1e-6)


def bench_conv(backends, dtype, repeats, rows):
    rng = np.random.default_rng(0)
    for name, n, cin, h, w, cout, k, stride, pad in CASES:
        x = rng.standard_normal((n, cin, h, w)).astype(dtype)
        wt = rng.standard_normal((cout, cin, k, k)).astype(dtype)
        b = rng.standard_normal(cout).astype(dtype)
        outs = {}
        times = {}
        for bk_name, bk in backends.items():
            y = bk.conv2d_forward(x, wt, b, stride, pad)
            dy = np.ones_like(y)
            times[bk_name] = (
                timeit(lambda bk=bk: bk.conv2d_forward(x, wt, b, stride, pad), repeats),
                timeit(lambda bk=bk, dy=dy: bk.conv2d_backward(x, wt, dy, stride, pad), repeats),
            )
            outs[bk_name] = (y, bk.conv2d_backward(x, wt, dy, stride, pad))
        rows.append((name + " fwd", {k: v[0] for k, v in times.items()}, _check(outs, 0)))
        rows.append((name + " bwd", {k: v[1] for k, v in times.items()}, _check(outs, 1)))


def bench_pool(backends, dtype, repeats, rows):
    rng = np.random.default_rng(1)
    for name, n, c, h, w, k in POOL_CASES:
        x = rng.standard_normal((n, c, h, w)).astype(dtype)
        outs = {}
        times = {}
        for bk_name, bk in backends.items():
            y, arg = bk.maxpool_forward(x, k, k)
            dy = np.ones_like(y)
            times[bk_name] = (
                timeit(lambda bk=bk: bk.maxpool_forward(x, k, k), repeats),
                timeit(lambda bk=bk: bk.avgpool_forward(x, k, k), repeats),
            )
            outs[bk_name] = (y, arg, bk.maxpool_backward(dy, arg, k, k), bk.avgpool_forward(x, k, k))
        rows.append((name + " max", {k2: v[0] for k2, v in times.items()}, _check(outs, 0, 1, 2)))
        rows.append((name + " avg", {k2: v[1] for k2, v in times.items()}, _check(outs, 3)))


def _check(outs, *slots):
    names = list(outs)
    if len(names) < 2:
        return "n/a"
    a, b = outs[names[0]], outs[names[1]]
    ok = all(agree(a[s], b[s]) for s in slots)
    return "ok" if ok else "MISMATCH"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    args = ap.parse_args()

    names = available_backends()
    backends = {n: get_backend(n) for n in names}
    print(f"backends: {', '.join(names)}  dtype: {args.dtype}  repeats: {args.repeats}")

    rows = []
    bench_conv(backends, np.dtype(args.dtype), args.repeats, rows)
    bench_pool(backends, np.dtype(args.dtype), args.repeats, rows)

    width = max(len(r[0]) for r in rows)
    header = f"{'case':<{width}}  " + "".join(f"{n:>12}" for n in names) + "  agreement"
    print(header)
    print("-" * len(header))
    mismatches = 0
    for name, times, status in rows:
        cells = "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        print(f"{name:<{width}}  {cells}  {status}")
        mismatches += status == "MISMATCH"
    if len(names) > 1:
        ratios = [
            times[names[1]] / times[names[0]] if times[names[0]] else float("nan")
            for _, times, _ in rows
        ]
        print(f"\nmedian {names[1]}/{names[0]} time ratio: {np.median(ratios):.2f}x")
    if mismatches:
        raise SystemExit(f"{mismatches} case(s) disagreed between backends")


if __name__ == "__main__":
    main()
