"""Hot ring kernels, compiled when available.

The compiled extension is used unless it failed to build or the environment
variable ``MPCGRAPH_PURE_PYTHON`` is set to a non-empty value other than 0.
Inputs are normalised to contiguous uint64 here so both backends see the
same layout.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("MPCGRAPH_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _u64(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.uint64)


def ring_matmul(a: np.ndarray, b: np.ndarray, mask: int) -> np.ndarray:
    """Matrix product modulo 2^64 reduced by ``mask``; 2-D operands."""
    return _impl.ring_matmul(_u64(a), _u64(b), np.uint64(mask))


def bit_decompose(x: np.ndarray, w: int) -> np.ndarray:
    """Low ``w`` bits of each element as uint8, shape x.shape + (w,)."""
    flat = _u64(x).reshape(-1)
    return _impl.bit_decompose(flat, int(w)).reshape(np.shape(x) + (w,))


def arith_shift(x: np.ndarray, k: int, width: int) -> np.ndarray:
    """Signed right shift of ``width``-bit ring elements, wrapped back into the ring."""
    flat = _u64(x).reshape(-1)
    return _impl.arith_shift(flat, int(k), int(width)).reshape(np.shape(x))
