"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Shapes follow desk-scale training (B = 128 bags over |V| = 2048, d = 128) and
retrieval (2,000 passages, k = 100).
"""

import argparse
import timeit

import numpy as np

from robustdr import _fallback, kernels

try:
    from robustdr import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    V, d, B = 2048, 128, 128
    table = rng.normal(size=(V, d))
    lengths = rng.integers(3, 30, B)
    ids = rng.integers(0, V, lengths.sum())
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    grad = rng.normal(size=(B, d))
    matrix = rng.normal(size=(2000, d))
    query = rng.normal(size=d)
    return {
        "bag_mean": lambda impl: kernels.bag_mean(table, ids, offsets, impl=impl),
        "bag_mean_backward": lambda impl: kernels.bag_mean_backward(grad, ids, offsets, np.zeros((V, d)), impl=impl),
        "topk_scan k=100": lambda impl: kernels.topk_scan(matrix, query, 100, impl=impl),
        "topk_scan k=1000": lambda impl: kernels.topk_scan(matrix, query, 1000, impl=impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=50)
    args = ap.parse_args()
    impls = [("numpy", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<20}" + "".join(f"{name:>12}" for name, _ in impls) + ("     speedup" if _kernels else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = []
        for _, impl in impls:
            best = min(timeit.repeat(lambda: fn(impl), number=args.number, repeat=args.repeat))
            times.append(best / args.number * 1e6)
        row = f"{name:<20}" + "".join(f"{t:>10.1f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
