"""Benchmark the compiled conv backend against the pure-numpy fallback.

Times the three primitives (forward, input gradient, kernel gradient)
on the layer shapes used by the 64x64 pixel encoder, plus a small
vector-policy-sized case. Run with ``python benchmarks/bench_conv.py``.
"""

import argparse
import time

import numpy as np

from plls import _conv_numpy

try:
    from plls import _convcore
except ImportError:
    _convcore = None

# (name, batch, in_ch, hw, out_ch, kernel, stride)
CASES = [
    ("enc1 64x64", 8, 3, 64, 32, 4, 2),
    ("enc2 31x31", 8, 32, 31, 64, 4, 2),
    ("enc3 14x14", 8, 64, 14, 128, 4, 2),
    ("enc4 6x6", 8, 128, 6, 256, 4, 2),
    ("small 16x16", 32, 8, 16, 16, 3, 1),
]


def _time(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_case(impl, batch, in_ch, hw, out_ch, kernel, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, in_ch, hw, hw))
    k = rng.standard_normal((out_ch, in_ch, kernel, kernel))
    y = impl.conv2d_forward(x, k, stride)
    gy = rng.standard_normal(y.shape)
    return {
        "forward": _time(lambda: impl.conv2d_forward(x, k, stride), repeats),
        "input_grad": _time(
            lambda: impl.conv2d_input_grad(gy, k, stride, hw, hw), repeats
        ),
        "kernel_grad": _time(
            lambda: impl.conv2d_kernel_grad(gy, x, stride, kernel, kernel), repeats
        ),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _convcore is None:
        print("compiled extension unavailable; timing numpy fallback only")
    header = f"{'case':<14}{'primitive':<13}{'numpy':>10}{'cython':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, *shape in CASES:
        ref = bench_case(_conv_numpy, *shape, args.repeats)
        fast = (
            bench_case(_convcore, *shape, args.repeats) if _convcore else None
        )
        for prim in ("forward", "input_grad", "kernel_grad"):
            n_s = ref[prim]
            if fast:
                c_s = fast[prim]
                print(
                    f"{name:<14}{prim:<13}{n_s * 1e3:>8.2f}ms{c_s * 1e3:>8.2f}ms"
                    f"{n_s / c_s:>8.1f}x"
                )
            else:
                print(f"{name:<14}{prim:<13}{n_s * 1e3:>8.2f}ms{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
