"""Compare the compiled ring kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mpcgraph.runtime import _kernels_py
from mpcgraph.runtime import kernels

try:
    from mpcgraph.runtime import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def cases(rng):
    a = rng.integers(0, 2**63, (64, 64), dtype=np.uint64)
    b = rng.integers(0, 2**63, (64, 64), dtype=np.uint64)
    x = rng.integers(0, 2**63, 100_000, dtype=np.uint64)
    return {
        "ring_matmul 64x64": lambda m: m.ring_matmul(a, b, MASK),
        "bit_decompose n=1e5 w=33": lambda m: m.bit_decompose(x, 33),
        "arith_shift n=1e5 k=16": lambda m: m.arith_shift(x, 16, 64),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    impls = {"numpy": _kernels_py}
    if _kernels_c is not None:
        impls["cython"] = _kernels_c
    print(f"selected backend: {kernels.BACKEND}")
    print(f"{'kernel':<28}" + "".join(f"{n:>12}" for n in impls) + f"{'speedup':>10}")
    for name, fn in cases(rng).items():
        ref = fn(_kernels_py)
        times = {}
        for label, mod in impls.items():
            assert np.array_equal(fn(mod), ref), f"{label} disagrees on {name}"
            times[label] = min(timeit.repeat(lambda: fn(mod), number=3, repeat=args.repeat)) / 3
        speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<28}" + "".join(f"{t * 1e3:>10.3f}ms" for t in times.values()) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
