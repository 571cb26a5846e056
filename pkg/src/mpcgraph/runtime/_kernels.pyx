# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ring kernels: wrapping uint64 matmul, bit decomposition, signed shift."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, uint8_t

cnp.import_array()


def ring_matmul(const uint64_t[:, ::1] a, const uint64_t[:, ::1] b, uint64_t mask):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, j, t
    cdef uint64_t av
    if b.shape[0] != k:
        raise ValueError(f"shape mismatch: inner dims {k}≠{b.shape[0]}")
    out = np.zeros((m, p), dtype=np.uint64)
    cdef uint64_t[:, ::1] o = out
    with nogil:
        for i in range(m):
            for t in range(k):
                av = a[i, t]
                for j in range(p):
                    o[i, j] += av * b[t, j]
            for j in range(p):
                o[i, j] &= mask
    return out


def bit_decompose(const uint64_t[::1] x, int w):
    cdef Py_ssize_t n = x.shape[0], i
    cdef int j
    cdef uint64_t v
    out = np.empty((n, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] o = out
    with nogil:
        for i in range(n):
            v = x[i]
            for j in range(w):
                o[i, j] = (v >> j) & 1
    return out


def arith_shift(const uint64_t[::1] x, int k, int width):
    cdef Py_ssize_t n = x.shape[0], i
    cdef uint64_t mask = <uint64_t>(-1) if width == 64 else ((<uint64_t>1) << width) - 1
    cdef uint64_t sign = (<uint64_t>1) << (width - 1)
    cdef int64_t s
    out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(n):
            # sign-extend the width-bit value to 64 bits, shift, wrap back
            s = <int64_t>((x[i] ^ sign) - sign) if width < 64 else <int64_t>x[i]
            o[i] = (<uint64_t>(s >> k)) & mask
    return out
