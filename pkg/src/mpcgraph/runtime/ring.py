"""Arithmetic in Z/2^N on uint64 storage, fixed-point encoding and wire format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class Ring:
    width: int = 64

    def __post_init__(self):
        if self.width % 8 or not 8 <= self.width <= 64:
            raise ValueError(f"ring width must be a multiple of 8 in [8, 64], got {self.width}")

    @property
    def mask(self) -> np.uint64:
        return np.uint64((1 << self.width) - 1)

    @property
    def nbytes(self) -> int:
        return self.width // 8

    def wrap(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.uint64) & self.mask

    def from_signed(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.int64).view(np.uint64) & self.mask

    def to_signed(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.uint64)
        if self.width == 64:
            return x.view(np.int64)
        sign = np.uint64(1 << (self.width - 1))
        return ((x ^ sign) - sign).view(np.int64)

    def encode(self, x, scale: int) -> np.ndarray:
        """round(x * scale) as a ring element."""
        v = np.rint(np.asarray(x, dtype=np.float64) * scale)
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot encode non-finite value")
        v = np.clip(v, -2.0 ** 63, 2.0 ** 63 - 1024)
        return self.from_signed(v.astype(np.int64))

    def decode(self, x, scale: int) -> np.ndarray:
        return self.to_signed(x).astype(np.float64) / scale

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, 2 ** 64, size=shape, dtype=np.uint64, endpoint=False) & self.mask

    # local arithmetic
    def add(self, a, b):
        return (np.asarray(a, np.uint64) + np.asarray(b, np.uint64)) & self.mask

    def sub(self, a, b):
        return (np.asarray(a, np.uint64) - np.asarray(b, np.uint64)) & self.mask

    def neg(self, a):
        return (np.uint64(0) - np.asarray(a, np.uint64)) & self.mask

    def mul(self, a, b):
        return (np.asarray(a, np.uint64) * np.asarray(b, np.uint64)) & self.mask

    def shift(self, a, k: int):
        """Arithmetic right shift of the signed interpretation."""
        if k == 0:
            return np.asarray(a, np.uint64)
        return kernels.arith_shift(a, k, self.width)

    def matmul(self, a, b):
        """Wrapping matmul with numpy broadcasting over leading batch dims."""
        a = np.asarray(a, np.uint64)
        b = np.asarray(b, np.uint64)
        vec_a, vec_b = a.ndim == 1, b.ndim == 1
        if vec_a:
            a = a[None, :]
        if vec_b:
            b = b[:, None]
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        A = np.broadcast_to(a, batch + a.shape[-2:]).reshape((-1,) + a.shape[-2:])
        B = np.broadcast_to(b, batch + b.shape[-2:]).reshape((-1,) + b.shape[-2:])
        out = np.stack([kernels.ring_matmul(x, y, int(self.mask)) for x, y in zip(A, B)])
        out = out.reshape(batch + out.shape[-2:])
        if vec_a:
            out = out[..., 0, :]
        if vec_b:
            out = out[..., 0]
        return out

    # wire format: little-endian, N/8 bytes per element
    def to_bytes(self, x) -> bytes:
        x = np.ascontiguousarray(x, dtype="<u8").reshape(-1)
        if self.width == 64:
            return x.tobytes()
        return x.view(np.uint8).reshape(-1, 8)[:, : self.nbytes].tobytes()

    def from_bytes(self, data: bytes, shape) -> np.ndarray:
        raw = np.frombuffer(data, dtype=np.uint8)
        if self.width == 64:
            return raw.view("<u8").astype(np.uint64).reshape(shape)
        padded = np.zeros((raw.size // self.nbytes, 8), dtype=np.uint8)
        padded[:, : self.nbytes] = raw.reshape(-1, self.nbytes)
        return padded.view("<u8").astype(np.uint64).reshape(shape)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8).reshape(-1)).tobytes()


def unpack_bits(data: bytes, shape) -> np.ndarray:
    n = int(np.prod(shape, dtype=np.int64))
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n).reshape(shape)
