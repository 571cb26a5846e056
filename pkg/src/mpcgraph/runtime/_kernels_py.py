"""Pure-numpy versions of the compiled ring kernels."""

import numpy as np


def ring_matmul(a: np.ndarray, b: np.ndarray, mask) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: inner dims {a.shape[1]}≠{b.shape[0]}")
    # integer matmul wraps modulo 2^64
    return (a @ b) & np.uint64(mask)


def bit_decompose(x: np.ndarray, w: int) -> np.ndarray:
    shifts = np.arange(w, dtype=np.uint64)
    return ((x[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def arith_shift(x: np.ndarray, k: int, width: int) -> np.ndarray:
    mask = np.uint64((1 << width) - 1)
    sign = np.uint64(1 << (width - 1))
    s = ((x ^ sign) - sign).view(np.int64) if width < 64 else x.view(np.int64)
    return (s >> np.int64(k)).view(np.uint64) & mask
