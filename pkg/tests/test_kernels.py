import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mpcgraph.runtime import _kernels_py, kernels

compiled = pytest.importorskip("mpcgraph.runtime._kernels", reason="compiled kernels not built")

u64 = hnp.arrays(np.uint64, st.integers(1, 40), elements=st.integers(0, 2 ** 64 - 1))
MASKS = st.sampled_from([2 ** 64 - 1, 2 ** 33 - 1, 2 ** 16 - 1, 2 ** 8 - 1])


def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"


@settings(max_examples=60)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32), MASKS)
def test_matmul_agrees(n, k, m, seed, mask):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2 ** 64, size=(n, k), dtype=np.uint64)
    b = rng.integers(0, 2 ** 64, size=(k, m), dtype=np.uint64)
    want = _kernels_py.ring_matmul(a, b, np.uint64(mask))
    assert np.array_equal(compiled.ring_matmul(a, b, np.uint64(mask)), want)
    oracle = [[sum(int(a[i, t]) * int(b[t, j]) for t in range(k)) & mask for j in range(m)] for i in range(n)]
    assert want.tolist() == oracle


@settings(max_examples=60)
@given(u64, st.integers(1, 64))
def test_bit_decompose_agrees(x, w):
    want = _kernels_py.bit_decompose(x, w)
    assert np.array_equal(compiled.bit_decompose(x, w), want)
    assert want.tolist() == [[(int(v) >> i) & 1 for i in range(w)] for v in x]


@settings(max_examples=60)
@given(u64, st.integers(0, 63), st.sampled_from([8, 16, 33, 64]))
def test_arith_shift_agrees(x, k, width):
    x = x & np.uint64(2 ** width - 1 if width < 64 else 2 ** 64 - 1)
    k = min(k, width - 1)
    want = _kernels_py.arith_shift(x, k, width)
    assert np.array_equal(compiled.arith_shift(x, k, width), want)
    signed = [int(v) - (1 << width) if int(v) >> (width - 1) else int(v) for v in x]
    assert want.tolist() == [(s >> k) % (1 << width) for s in signed]


def test_dispatch_shapes():
    x = np.arange(12, dtype=np.uint64).reshape(3, 4)
    assert kernels.bit_decompose(x, 5).shape == (3, 4, 5)
    assert kernels.arith_shift(x, 1, 64).shape == (3, 4)


def test_pure_python_override():
    env = {**os.environ, "MPCGRAPH_PURE_PYTHON": "1"}
    code = ("import json; from mpcgraph.runtime import kernels; "
            "print(json.dumps([kernels.BACKEND, kernels.arith_shift([2**64 - 4], 1, 64).tolist()]))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert json.loads(out.stdout) == ["python", [2 ** 64 - 2]]
