"""Compare the compiled kernels with the NumPy fallback.

Run ``python benchmarks/bench_kernels.py [--repeat N]``.  Prints one line per
kernel with the best-of-N wall time for each backend and the speedup.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from hwnas.nn import _fallback

try:
    from hwnas.nn import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng: np.random.Generator) -> dict:
    x = rng.standard_normal((32, 16, 8, 8))
    w = rng.standard_normal((16, 16, 3, 3))
    dy = rng.standard_normal((32, 16, 8, 8))
    a = rng.standard_normal((32, 200))
    gram = a @ a.T
    return {
        "conv2d_forward 32x16x8x8 k3": lambda m: m.conv2d_forward(x, w, 1, 1),
        "conv2d_backward_input": lambda m: m.conv2d_backward_input(dy, w, (8, 8), 1, 1),
        "conv2d_backward_weight": lambda m: m.conv2d_backward_weight(dy, x, 3, 1, 1),
        "jacobi_eigvalsh n=32": lambda m: m.jacobi_eigvalsh(gram),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not available; only the fallback can run")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:32s} {t_py:10.3f} {'-':>10s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
