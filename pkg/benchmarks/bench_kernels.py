"""Benchmark the compiled kernels against the NumPy fallback.

Runs each hot kernel on a few representative shapes with both backends
and prints a table of per-call times plus the speedup. Also verifies on
every shape that the two backends agree, so a timing win can never hide
a numerical divergence.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import timeit

import numpy as np

from groto import _kernels_np

try:
    from groto import _kernels_cy
except ImportError:
    _kernels_cy = None

# (kernel name, shape label, argument builder)
CASES = [
    ("softmax_rows", "160x12", lambda rng: (rng.standard_normal((160, 12)),)),
    ("softmax_rows", "2048x64", lambda rng: (rng.standard_normal((2048, 64)),)),
    (
        "pairwise_cosine_distance",
        "160x32 vs 12x32",
        lambda rng: (rng.standard_normal((160, 32)), rng.standard_normal((12, 32))),
    ),
    (
        "pairwise_cosine_distance",
        "512x64 vs 512x64",
        lambda rng: (rng.standard_normal((512, 64)), rng.standard_normal((512, 64))),
    ),
    ("herding_order", "50x32, count 10", lambda rng: (rng.standard_normal((50, 32)), 10)),
    ("herding_order", "400x64, count 50", lambda rng: (rng.standard_normal((400, 64)), 50)),
]


def _prepare(args):
    return tuple(
        np.ascontiguousarray(a, dtype=np.float64) if isinstance(a, np.ndarray) else a
        for a in args
    )


def time_call(fn, args, repeats):
    timer = timeit.Timer(lambda: fn(*args))
    # best of 5 rounds of `repeats` calls, reported per call
    return min(timer.repeat(repeat=5, number=repeats)) / repeats


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="calls per timing round")
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled extension not importable; timing the NumPy fallback only")

    rng = np.random.default_rng(0)
    header = f"{'kernel':<26} {'shape':<20} {'numpy':>12} {'cython':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, label, build in CASES:
        call_args = _prepare(build(rng))
        np_fn = getattr(_kernels_np, name)
        t_np = time_call(np_fn, call_args, args.repeats)
        if _kernels_cy is None:
            print(f"{name:<26} {label:<20} {t_np * 1e6:>10.1f}us {'-':>12} {'-':>8}")
            continue
        cy_fn = getattr(_kernels_cy, name)
        np.testing.assert_allclose(
            np.asarray(cy_fn(*call_args)), np.asarray(np_fn(*call_args)), atol=1e-12
        )
        t_cy = time_call(cy_fn, call_args, args.repeats)
        print(
            f"{name:<26} {label:<20} {t_np * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us "
            f"{t_np / t_cy:>7.2f}x"
        )


if __name__ == "__main__":
    main()
