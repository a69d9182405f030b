"""Benchmark: compiled patch-matrix kernels vs the pure-numpy fallback.

Runs im2col / col2im and a full conv forward+backward at training-like
shapes with both backends and prints a timing table.  Usage:

    python3 benchmarks/bench_conv.py [--repeats N]
"""

import argparse
import time

import numpy as np

from anonet import nn
from anonet._kernels import _convpy

try:
    from anonet._kernels import _convext
except ImportError:
    _convext = None


SHAPES = [
    # (channels, H, W, kernel, stride)
    (1, 128, 128, 7, 1),
    (13, 128, 128, 7, 1),
    (32, 128, 128, 7, 1),
    (32, 128, 128, 3, 1),
    (32, 256, 256, 11, 2),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(repeats):
    print(f"{'shape':>28} {'op':>8} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for c, h, w, k, stride in SHAPES:
        img = rng.standard_normal((c, h, w))
        pad = (k - 1) // 2
        cols = _convpy.im2col(img, k, stride, pad)
        label = f"{c}x{h}x{w} k={k} s={stride}"

        t_py = timeit(lambda: _convpy.im2col(img, k, stride, pad), repeats)
        if _convext is not None:
            t_cy = timeit(lambda: _convext.im2col(img, k, stride, pad), repeats)
            print(f"{label:>28} {'im2col':>8} {t_py * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms "
                  f"{t_py / t_cy:7.2f}x")
        else:
            print(f"{label:>28} {'im2col':>8} {t_py * 1e3:9.2f}ms {'n/a':>10}")

        t_py = timeit(lambda: _convpy.col2im(cols, c, h, w, k, stride, pad), repeats)
        if _convext is not None:
            t_cy = timeit(lambda: _convext.col2im(cols, c, h, w, k, stride, pad),
                          repeats)
            print(f"{label:>28} {'col2im':>8} {t_py * 1e3:9.2f}ms {t_cy * 1e3:9.2f}ms "
                  f"{t_py / t_cy:7.2f}x")
        else:
            print(f"{label:>28} {'col2im':>8} {t_py * 1e3:9.2f}ms {'n/a':>10}")


def bench_conv_layer(repeats):
    """Full conv forward+backward on a training-sized batch, both backends."""
    import anonet._kernels as kernels

    rng = np.random.default_rng(1)
    x = rng.standard_normal((16, 13, 128, 128)).astype(np.float32)
    params = nn.ConvParams(
        rng.standard_normal((32, 13, 7, 7)).astype(np.float32) * 0.05,
        np.zeros(32))
    grad = rng.standard_normal((16, 32, 128, 128)).astype(np.float32)

    results = {}
    for name, backend in (("numpy", _convpy), ("cython", _convext)):
        if backend is None:
            continue
        saved = (kernels.im2col, kernels.col2im)
        kernels.im2col, kernels.col2im = backend.im2col, backend.col2im
        try:
            fwd = timeit(lambda: nn.conv2d_forward(x, params), repeats)
            bwd = timeit(lambda: nn.conv2d_backward(x, params, grad), repeats)
        finally:
            kernels.im2col, kernels.col2im = saved
        results[name] = (fwd, bwd)
        print(f"conv 16x13x128x128 k=7 [{name:>6}] "
              f"forward {fwd * 1e3:8.1f}ms  backward {bwd * 1e3:8.1f}ms")
    if len(results) == 2:
        f_np, b_np = results["numpy"]
        f_cy, b_cy = results["cython"]
        print(f"layer speedup: forward {f_np / f_cy:.2f}x, backward {b_np / b_cy:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if _convext is None:
        print("compiled extension not available; numpy timings only")
    bench_kernels(args.repeats)
    print()
    bench_conv_layer(args.repeats)


if __name__ == "__main__":
    main()
