"""Operator table: categories, stage sets and float64 reference kernels.

Every operator known to the IR is registered here once.  The plaintext
interpreter, shape inference and the rewrite engine all consult this table,
so adding an operator means adding one entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

# categories
SOURCE = "source"
ADD_LIKE = "add_like"
MUL_LIKE = "mul_like"
LTZ = "ltz"
MAX = "max"
SHAPE_ONLY = "shape_only"
VALUE_FREE = "value_free"
REVEAL = "reveal"
COMPOSITE = "composite"
MPC = "mpc"


@dataclass(frozen=True)
class OpDef:
    name: str
    category: str
    kernel: Callable[[Sequence[np.ndarray], dict], np.ndarray] | None
    arity: int | None = None  # None means variadic
    rank: int = 0  # rewrite order; replacements may only emit lower ranks


OPS: dict[str, OpDef] = {}


def _register(name, category, kernel, arity=None, rank=0):
    OPS[name] = OpDef(name, category, kernel, arity, rank)


def _axis(attrs):
    axis = attrs.get("axis")
    if isinstance(axis, list):
        return tuple(axis)
    return axis


def pool_windows(x: np.ndarray, k: int) -> np.ndarray:
    """Non-overlapping k x k windows of the last two dims, flattened to a trailing axis.

    Works for any dtype, so the runtime reuses it on ring shares.
    """
    h, w = x.shape[-2] // k, x.shape[-1] // k
    if h < 1 or w < 1:
        raise ValueError(f"pool window {k} larger than input {x.shape[-2:]}")
    x = x[..., : h * k, : w * k]
    x = x.reshape(x.shape[:-2] + (h, k, w, k))
    x = np.moveaxis(x, -3, -2)
    return x.reshape(x.shape[:-2] + (k * k,))


def conv2d_patches(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """im2col for stride-1, unpadded conv: [..., C, H, W] -> [..., H', W', C*kh*kw]."""
    win = sliding_window_view(x, (kh, kw), axis=(-2, -1))  # [..., C, H', W', kh, kw]
    win = np.moveaxis(win, -5, -3)  # [..., H', W', C, kh, kw]
    return win.reshape(win.shape[:-3] + (-1,))


def conv2d_from_patches(patches: np.ndarray, weight: np.ndarray) -> np.ndarray:
    out = patches @ weight.reshape(weight.shape[0], -1).T  # [..., H', W', O]
    return np.moveaxis(out, -1, -3)


def _conv2d(xs, attrs):
    x, w = xs
    if x.ndim < 3 or w.ndim != 4:
        raise ValueError("conv2d expects input [..., C, H, W] and weight [O, C, kh, kw]")
    if x.shape[-3] != w.shape[1]:
        raise ValueError(f"shape mismatch: conv2d channels {x.shape[-3]}≠{w.shape[1]}")
    return conv2d_from_patches(conv2d_patches(x, w.shape[2], w.shape[3]), w)


def _matmul(xs, attrs):
    a, b = xs
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ValueError(f"shape mismatch: inner dims {ka}≠{kb}")
    return np.matmul(a, b)


def _softmax(xs, attrs):
    x = xs[0]
    axis = attrs.get("axis", -1)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _layernorm(xs, attrs):
    x = xs[0]
    axis = attrs.get("axis", -1)
    eps = attrs.get("eps", 1e-5)
    mu = x.mean(axis=axis, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axis, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if len(xs) > 1:
        y = y * xs[1]
    if len(xs) > 2:
        y = y + xs[2]
    return y


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _max(xs, attrs):
    return xs[0].max(axis=_axis(attrs), keepdims=attrs.get("keepdims", False))


def _sum(xs, attrs):
    return xs[0].sum(axis=_axis(attrs), keepdims=attrs.get("keepdims", False))


def _mean(xs, attrs):
    return xs[0].mean(axis=_axis(attrs), keepdims=attrs.get("keepdims", False))


def _flatten(xs, attrs):
    x = xs[0]
    start = attrs.get("start_dim", 0) % max(x.ndim, 1)
    return x.reshape(x.shape[:start] + (-1,))


def _transpose(xs, attrs):
    d0, d1 = attrs.get("dims", (-2, -1))
    return np.swapaxes(xs[0], d0, d1)


def _encode(xs, attrs):
    return np.rint(xs[0] * (attrs["s_new"] / attrs.get("s_old", 1)))


_register("input", SOURCE, None, 0)
_register("const", SOURCE, None, 0)

_register("add", ADD_LIKE, lambda xs, a: xs[0] + xs[1], 2)
_register("sub", ADD_LIKE, lambda xs, a: xs[0] - xs[1], 2)
_register("sum", ADD_LIKE, _sum, 1)
_register("mean", ADD_LIKE, _mean, 1)
_register("avgpool", ADD_LIKE, lambda xs, a: pool_windows(xs[0], a["kernel"]).mean(axis=-1), 1)

_register("mul", MUL_LIKE, lambda xs, a: xs[0] * xs[1], 2)
_register("matmul", MUL_LIKE, _matmul, 2)
_register("conv2d", MUL_LIKE, _conv2d, 2)

_register("ltz", LTZ, lambda xs, a: (xs[0] < 0).astype(np.float64), 1)

_register("max", MAX, _max, 1)
_register("maxpool", MAX, lambda xs, a: pool_windows(xs[0], a["kernel"]).max(axis=-1), 1)

_register("reshape", SHAPE_ONLY, lambda xs, a: xs[0].reshape(a["shape"]), 1)
_register("transpose", SHAPE_ONLY, _transpose, 1)
_register("permute", SHAPE_ONLY, lambda xs, a: np.transpose(xs[0], a["dims"]), 1)
_register("flatten", SHAPE_ONLY, _flatten, 1)
_register("stack", SHAPE_ONLY, lambda xs, a: np.stack(xs, axis=a.get("axis", 0)), None)

_register("zeros_like", VALUE_FREE, lambda xs, a: np.zeros_like(xs[0], dtype=np.float64), 1)
_register("full_like", VALUE_FREE, lambda xs, a: np.full(xs[0].shape, float(a["value"])), 1)

_register("reveal", REVEAL, lambda xs, a: xs[0], 1)

_register("relu", COMPOSITE, lambda xs, a: np.maximum(xs[0], 0.0), 1, rank=1)
_register("ge", COMPOSITE, lambda xs, a: (xs[0] >= xs[1]).astype(np.float64), 2, rank=1)
_register("gt", COMPOSITE, lambda xs, a: (xs[0] > xs[1]).astype(np.float64), 2, rank=1)
_register("le", COMPOSITE, lambda xs, a: (xs[0] <= xs[1]).astype(np.float64), 2, rank=1)
_register("lt", COMPOSITE, lambda xs, a: (xs[0] < xs[1]).astype(np.float64), 2, rank=1)
_register("linear", COMPOSITE, lambda xs, a: _matmul(xs[:2], a) + xs[2] if len(xs) > 2 else _matmul(xs, a), None, rank=1)
_register("exp", COMPOSITE, lambda xs, a: np.exp(xs[0]), 1, rank=1)
_register("gelu", COMPOSITE, lambda xs, a: gelu(xs[0]), 1, rank=2)
_register("silu", COMPOSITE, lambda xs, a: xs[0] * sigmoid(xs[0]), 1, rank=2)
_register("sigmoid", COMPOSITE, lambda xs, a: sigmoid(xs[0]), 1, rank=2)
_register("reciprocal", COMPOSITE, lambda xs, a: 1.0 / xs[0], 1, rank=3)
_register("rsqrt", COMPOSITE, lambda xs, a: 1.0 / np.sqrt(xs[0]), 1, rank=3)
_register("softmax", COMPOSITE, _softmax, 1, rank=4)
_register("layernorm", COMPOSITE, _layernorm, None, rank=4)

_register("encode", MPC, _encode, 1)
_register("trunc", MPC, lambda xs, a: np.floor(xs[0] / a["s"]), 1)
_register("mul_mpc", MPC, None, 2)
_register("ltz_mpc", MPC, None, 1)

MPC_ONLY = frozenset(n for n, d in OPS.items() if d.category == MPC)
SUPPORTED = frozenset(
    n
    for n, d in OPS.items()
    if d.category in (SOURCE, ADD_LIKE, MUL_LIKE, LTZ, MAX, SHAPE_ONLY, VALUE_FREE, REVEAL)
)
COMPOSITES = frozenset(n for n, d in OPS.items() if d.category == COMPOSITE)


def category(op: str) -> str:
    try:
        return OPS[op].category
    except KeyError:
        raise KeyError(f"unknown operator {op!r}") from None


def evaluate(op: str, xs: Sequence[np.ndarray], attrs: dict) -> np.ndarray:
    d = OPS.get(op)
    if d is None or d.kernel is None:
        raise ValueError(f"operator {op!r} has no plaintext kernel")
    return np.asarray(d.kernel(list(xs), attrs), dtype=np.float64)
