"""Built-in decompositions and tunable approximations.

Every replacement emits only supported operators or composites of lower
rank.  Knob ranges are chosen so the upper end is the most accurate
variant and every decrement removes MPC multiplications or comparisons.
"""

from __future__ import annotations

import functools
import json
from typing import Mapping

import numpy as np

from .engine import Emitter, Knob, PassDescriptor, lit, secret_input
from .fit import FIXTURE

EXP_MAX_T = 8
NEWTON_MAX_ITERS = 12
ORDER_DEGREES = (0, 2, 4)  # "order" knob level -> polynomial degree


@functools.lru_cache(maxsize=None)
def coefficient_table() -> dict[tuple[str, int], dict]:
    doc = json.loads(FIXTURE.read_text())
    return {(e["op"], e["degree"]): e for e in doc["entries"]}


# ---------------------------------------------------------------- exp

def exp_replacement(e: Emitter, x: int, t: int, clamp: bool) -> int:
    """(1 + x / 2^t)^(2^t), optionally zeroed below x < -2^t."""
    y = e.mul(x, lit(2.0 ** -t))
    y = e.add(y, lit(1))
    if clamp:
        below = e.ltz(e.add(x, lit(2 ** t)))
        y = e.mul(y, e.sub(lit(1), below))
    for _ in range(t):
        y = e.mul(y, y)
    return y


def _exp(e, node, args, knobs):
    return exp_replacement(e, args[0], knobs["t"], bool(knobs["clamp"]))


# ---------------------------------------------------------------- piecewise polynomials

def poly_replacement(e: Emitter, x: int, op: str, degree: int) -> int:
    if degree == 0:
        if op == "sigmoid":
            return e.sub(lit(1), e.ltz(x))
        return e.mul(x, e.sub(lit(1), e.ltz(x)))
    entry = coefficient_table()[(op, degree)]
    bound = entry["interval"][1]
    coeffs = entry["coefficients"]
    neg = e.ltz(x)
    neg_x = e.mul(neg, x)
    ax = e.sub(x, e.mul(neg_x, lit(2)))
    outside = e.sub(lit(1), e.ltz(e.sub(ax, lit(float(bound)))))
    acc = e.mul(ax, lit(float(coeffs[-1])))
    acc = e.add(acc, lit(float(coeffs[-2])))
    for c in reversed(coeffs[:-2]):
        acc = e.add(e.mul(acc, ax), lit(float(c)))
    if op == "sigmoid":
        sign = e.sub(lit(1), e.mul(neg, lit(2)))
        inner = e.add(e.mul(sign, acc), lit(0.5))
        outer = e.sub(lit(1), neg)
    else:
        inner = e.add(e.mul(x, lit(0.5)), acc)
        outer = e.sub(x, neg_x)
    return e.add(inner, e.mul(outside, e.sub(outer, inner)))


def _poly(e, node, args, knobs):
    return poly_replacement(e, args[0], node.op, ORDER_DEGREES[knobs["order"]])


# ---------------------------------------------------------------- softmax / layernorm

def softmax_decompose(e: Emitter, x: int, axis: int) -> int:
    m = e.add_node("max", (x,), axis=axis, keepdims=True)
    z = e.add_node("exp", (e.sub(x, m),))
    total = e.add_node("sum", (z,), axis=axis, keepdims=True)
    return e.mul(z, e.add_node("reciprocal", (total,)))


def _softmax(e, node, args, knobs):
    return softmax_decompose(e, args[0], node.attrs.get("axis", -1))


def layernorm_decompose(e: Emitter, args: list, axis: int, eps: float) -> int:
    x = args[0]
    mu = e.add_node("mean", (x,), axis=axis, keepdims=True)
    c = e.sub(x, mu)
    var = e.add_node("mean", (e.mul(c, c),), axis=axis, keepdims=True)
    y = e.mul(c, e.add_node("rsqrt", (e.add(var, lit(float(eps))),)))
    if len(args) > 1:
        y = e.mul(y, args[1])
    if len(args) > 2:
        y = e.add(y, args[2])
    return y


def _layernorm(e, node, args, knobs):
    return layernorm_decompose(e, args, node.attrs.get("axis", -1), node.attrs.get("eps", 1e-5))


# ---------------------------------------------------------------- Newton-Raphson

def newton_reciprocal(e: Emitter, x: int, iters: int) -> int:
    """y0 = 3 exp(0.5 - x) + 0.003, then y <- y (2 - x y)."""
    g = e.add_node("exp", (e.sub(lit(0.5), x),))
    y = e.add(e.mul(g, lit(3)), lit(0.003))
    for _ in range(iters):
        y = e.mul(y, e.sub(lit(2), e.mul(x, y)))
    return y


def newton_rsqrt(e: Emitter, x: int, iters: int) -> int:
    """y0 = 2.2 exp(-(x/2 + 0.2)) + 0.2 - x/1024, then y <- y (3 - x y^2) / 2."""
    g = e.add_node("exp", (e.sub(e.mul(x, lit(-0.5)), lit(0.2)),))
    y = e.add(e.mul(g, lit(2.2)), lit(0.2))
    y = e.sub(y, e.mul(x, lit(1.0 / 1024)))
    for _ in range(iters):
        y = e.mul(e.mul(y, e.sub(lit(3), e.mul(x, e.mul(y, y)))), lit(0.5))
    return y


def _reciprocal(e, node, args, knobs):
    return newton_reciprocal(e, args[0], knobs["iters"])


def _rsqrt(e, node, args, knobs):
    return newton_rsqrt(e, args[0], knobs["iters"])


# ---------------------------------------------------------------- plain decompositions

def _relu(e, node, args, knobs):
    x = args[0]
    return e.mul(x, e.sub(lit(1), e.ltz(x)))


def _compare(e, node, args, knobs):
    a, b = args
    if node.op == "ge":  # 1 - ((a - b) < 0)
        return e.sub(lit(1), e.ltz(e.sub(a, b)))
    if node.op == "lt":
        return e.ltz(e.sub(a, b))
    if node.op == "gt":
        return e.ltz(e.sub(b, a))
    return e.sub(lit(1), e.ltz(e.sub(b, a)))  # le


def _linear(e, node, args, knobs):
    y = e.add_node("matmul", tuple(args[:2]))
    if len(args) > 2:
        y = e.add(y, args[2])
    return y


# ---------------------------------------------------------------- max kernel

def max_tree_plan(n: int) -> list[int]:
    """Comparisons per level of the pairwise tree reduction over n elements."""
    plan = []
    while n > 1:
        plan.append(n // 2)
        n = n - n // 2
    return plan


def mux(c, x, y):
    """c ? x : y with one multiplication."""
    return y + c * (x - y)


def max_tree_reference(v: np.ndarray, axis: int = -1) -> tuple[np.ndarray, list[np.ndarray]]:
    """Plaintext tree reduction; returns the max and the compared differences per level."""
    v = np.moveaxis(np.asarray(v, dtype=np.float64), axis, -1)
    diffs = []
    while v.shape[-1] > 1:
        half = v.shape[-1] // 2
        a, b = v[..., :half], v[..., half:2 * half]
        d = a - b
        diffs.append(d)
        c = (d >= 0).astype(np.float64)
        merged = mux(c, a, b)
        v = np.concatenate([merged, v[..., 2 * half:]], axis=-1)
    return v[..., 0], diffs


# ---------------------------------------------------------------- registry

def _pass(name, ops, fn, knobs=(), secret_only=False, description=""):
    kw = {"filter": secret_input} if secret_only else {}
    return PassDescriptor(name, frozenset(ops), fn, tuple(knobs), description=description, **kw)


def builtin_passes() -> dict[str, PassDescriptor]:
    return {
        "relu": _pass("relu", ["relu"], _relu, description="x * (1 - ltz(x))"),
        "compare": _pass("compare", ["ge", "gt", "le", "lt"], _compare,
                         description="comparisons rewritten to ltz"),
        "linear": _pass("linear", ["linear"], _linear, description="matmul + bias"),
        "softmax": _pass("softmax", ["softmax"], _softmax, description="max-stabilised softmax"),
        "layernorm": _pass("layernorm", ["layernorm"], _layernorm, description="mean/var/rsqrt"),
        "exp": _pass("exp", ["exp"], _exp,
                     [Knob("t", 0, EXP_MAX_T, EXP_MAX_T), Knob("clamp", 0, 1, 1)],
                     secret_only=True, description="iterative (1 + x/2^t)^(2^t)"),
        "gelu": _pass("gelu", ["gelu"], _poly, [Knob("order", 0, 2, 2)], secret_only=True,
                      description="piecewise polynomial, degree 4/2, or ReLU"),
        "silu": _pass("silu", ["silu"], _poly, [Knob("order", 0, 2, 2)], secret_only=True,
                      description="piecewise polynomial, degree 4/2, or ReLU"),
        "sigmoid": _pass("sigmoid", ["sigmoid"], _poly, [Knob("order", 0, 2, 2)], secret_only=True,
                         description="piecewise polynomial, degree 4/2, or unit step"),
        "reciprocal": _pass("reciprocal", ["reciprocal"], _reciprocal,
                            [Knob("iters", 1, NEWTON_MAX_ITERS, NEWTON_MAX_ITERS)], secret_only=True,
                            description="Newton-Raphson with exp initial guess"),
        "rsqrt": _pass("rsqrt", ["rsqrt"], _rsqrt,
                       [Knob("iters", 1, NEWTON_MAX_ITERS, NEWTON_MAX_ITERS)], secret_only=True,
                       description="Newton-Raphson with exp initial guess"),
    }


DEFAULT_ORDER = ("linear", "relu", "compare", "softmax", "layernorm", "gelu", "silu", "sigmoid",
                 "reciprocal", "rsqrt", "exp")

# knobs decremented last during greedy search at a site
RISKY_KNOBS = ("clamp",)


def default_passes() -> list[PassDescriptor]:
    reg = builtin_passes()
    return [reg[n] for n in DEFAULT_ORDER]


def make_passes(spec: list[Mapping] | None) -> list[PassDescriptor]:
    """Build a pass list from config entries ``{"name", "knobs", "tunable"}`` or bare names.

    ``None`` selects every built-in pass with its defaults; an explicit list
    is taken as the complete pass set, in the given order.
    """
    reg = builtin_passes()
    if spec is None:
        return [reg[n] for n in DEFAULT_ORDER]
    out = []
    for entry in spec:
        if isinstance(entry, str):
            entry = {"name": entry}
        name = entry["name"]
        if name not in reg:
            raise KeyError(f"unknown pass {name!r}")
        out.append(reg[name].configure(entry.get("knobs"), entry.get("tunable")))
    return out
