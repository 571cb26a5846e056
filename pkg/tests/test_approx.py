import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from mpcgraph.approx.engine import ApproxError, rewrite_fixpoint
from mpcgraph.approx.fit import FIXTURE
from mpcgraph.approx.library import (ORDER_DEGREES, builtin_passes, coefficient_table, default_passes,
                                     make_passes, max_tree_plan, max_tree_reference, mux)
from mpcgraph.backend import LowerConfig, lower_pair, static_cost
from mpcgraph.frontend import run_frontend
from mpcgraph.interp import interpret
from mpcgraph.ir import GraphBuilder, is_post_approx, validate


def unary(op, shape=(1,), **attrs):
    b = GraphBuilder()
    x = b.input("x", list(shape))
    b.output(b.op(op, x, **attrs))
    return run_frontend(b.build(), {"secrets": {"x": [0]}})


def site_of(g, op):
    return next(n.site_id for n in g.nodes.values() if n.op == op)


def expand(g, knobs=None, passes=None):
    return rewrite_fixpoint(g, passes or default_passes(), knobs)


def run(g, x, knobs=None):
    post = expand(g, knobs).graph
    return interpret(post, {"x": np.asarray(x, dtype=float)})[0]


def op_counts(g):
    return Counter(n.op for n in g.nodes.values())


def exp_knobs(g, t, clamp):
    s = site_of(g, "exp")
    return {(s, "t"): t, (s, "clamp"): int(clamp)}


def exp_oracle(x, t, clamp):
    y = (1 + np.asarray(x, float) / 2 ** t) ** (2 ** t)
    if clamp:
        y = np.where(np.asarray(x) < -2 ** t, 0.0, y)
    return y


# ---------------------------------------------------------------- plain decompositions

def test_relu_decomposes_to_mul_and_ltz():
    g = unary("relu", (3,))
    post = expand(g).graph
    assert is_post_approx(post)
    c = op_counts(post)
    assert c["ltz"] == 1 and c["mul"] == 1 and c["sub"] == 1
    assert np.array_equal(interpret(post, {"x": np.array([-2.0, 0.0, 3.0])})[0], [0.0, 0.0, 3.0])


def test_ge_becomes_one_minus_ltz_of_difference():
    b = GraphBuilder()
    x = b.input("a", [3])
    y = b.input("b", [3])
    b.output(b.op("ge", x, y))
    g = run_frontend(b.build(), {"secrets": {"a": [0], "b": [1]}})
    post = expand(g).graph
    assert op_counts(post)["ltz"] == 1
    got = interpret(post, {"a": np.array([1.0, 2.0, 3.0]), "b": np.array([2.0, 2.0, 2.0])})[0]
    assert np.array_equal(got, [0.0, 1.0, 1.0])


def test_linear_becomes_matmul_plus_bias():
    b = GraphBuilder()
    x = b.input("x", [2])
    w = b.input("w", [2, 3])
    bias = b.input("b", [3])
    b.output(b.op("linear", x, w, bias))
    g = run_frontend(b.build(), {"secrets": {"x": [0], "w": [1], "b": [1]}})
    post = expand(g).graph
    c = op_counts(post)
    assert c["matmul"] == 1 and c["add"] == 1 and "linear" not in c
    rng = np.random.default_rng(0)
    vals = {"x": rng.normal(size=2), "w": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
    assert np.allclose(interpret(post, vals)[0], vals["x"] @ vals["w"] + vals["b"])


def test_unmatched_operator_reports_site():
    g = unary("gelu")
    with pytest.raises(ApproxError, match="no approximation for gelu at gelu/1"):
        expand(g, passes=make_passes(["exp"]))


def test_public_composites_are_left_alone():
    b = GraphBuilder()
    x = b.input("x", [2])
    b.output(b.op("exp", x))
    g = run_frontend(b.build(), {"public": ["x"]})
    assert op_counts(expand(g).graph)["exp"] == 1


def test_make_passes_errors():
    with pytest.raises(KeyError, match="unknown pass 'FooPass'"):
        make_passes(["FooPass"])
    with pytest.raises(ApproxError, match="no knob"):
        make_passes([{"name": "exp", "knobs": {"bogus": 1}}])
    p = make_passes([{"name": "exp", "knobs": {"t": 5}, "tunable": ["t"]}])[0]
    assert p.knob("t").value == 5 and not p.knob("clamp").tunable


def test_out_of_range_knob_rejected():
    g = unary("exp")
    with pytest.raises(ApproxError, match="outside"):
        expand(g, exp_knobs(g, 9, 1))


# ---------------------------------------------------------------- exp

@pytest.mark.parametrize("x", [-1.0, -3.0, 0.5, 2.0])
@pytest.mark.parametrize("t", [0, 3, 8])
def test_exp_matches_formula(x, t):
    g = unary("exp")
    got = run(g, [x], exp_knobs(g, t, False))[0]
    assert got == pytest.approx(exp_oracle(x, t, False), rel=1e-12)


def test_exp_examples():
    g = unary("exp")
    assert run(g, [-1.0], exp_knobs(g, 8, False))[0] == pytest.approx((1 - 1 / 256) ** 256, rel=1e-12)
    assert abs(run(g, [-600.0], exp_knobs(g, 8, False))[0]) >= 1e6
    assert run(g, [-600.0], exp_knobs(g, 8, True))[0] == 0.0


def test_exp_t0_clamp_is_shifted_relu():
    # (1 + x) zeroed below -1: a ReLU hinge at -1, agreeing with 1 + relu(x) for x >= 0
    g = unary("exp", (7,))
    x = np.array([-3.0, -1.5, -1.0, -0.25, 0.0, 0.5, 4.0])
    y = run(g, x, exp_knobs(g, 0, True))
    assert np.array_equal(y, np.maximum(1 + x, 0))
    assert np.array_equal(y[x >= 0], 1 + x[x >= 0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 8), st.floats(-1000, 50, allow_nan=False))
def test_exp_clamp_equivalence(t, x):
    g = unary("exp")
    clamped = run(g, [x], exp_knobs(g, t, True))[0]
    plain = run(g, [x], exp_knobs(g, t, False))[0]
    if x < -2 ** t:
        assert clamped == 0.0
    else:
        assert clamped == plain


@pytest.mark.parametrize("t,clamp", [(0, 0), (0, 1), (5, 0), (8, 1)])
def test_exp_structure(t, clamp):
    g = unary("exp")
    c = op_counts(expand(g, exp_knobs(g, t, clamp)).graph)
    assert c["mul"] == t + 1 + clamp
    assert c["ltz"] == clamp


# ---------------------------------------------------------------- polynomials

def _poly_graph(op, level):
    g = unary(op, (2001,))
    return g, {(site_of(g, op), "order"): level}


def gelu(x):
    return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def test_poly_degree_zero_fallbacks():
    for op, x, want in [("gelu", 2.0, 2.0), ("silu", -1.0, 0.0), ("sigmoid", -3.0, 0.0), ("sigmoid", 3.0, 1.0)]:
        g = unary(op)
        assert run(g, [x], {(site_of(g, op), "order"): 0})[0] == want


def test_gelu_degree4_error_bound():
    entry = coefficient_table()[("gelu", 4)]
    lo, hi = entry["interval"]
    g, knobs = _poly_graph("gelu", ORDER_DEGREES.index(4))
    x = np.linspace(lo, hi, 2001)
    err = np.max(np.abs(run(g, x, knobs) - gelu(x)))
    assert err <= 0.01
    assert err <= entry["max_abs_error"] + 1e-9


@pytest.mark.parametrize("op,ref", [
    ("gelu", gelu),
    ("silu", lambda x: x / (1 + np.exp(-x))),
    ("sigmoid", lambda x: 1 / (1 + np.exp(-x))),
])
@pytest.mark.parametrize("degree", [2, 4])
def test_poly_fixture_error_holds_globally(op, ref, degree):
    entry = coefficient_table()[(op, degree)]
    g, knobs = _poly_graph(op, ORDER_DEGREES.index(degree))
    x = np.linspace(-12, 12, 2001)
    err = np.max(np.abs(run(g, x, knobs) - ref(x)))
    assert err <= entry["max_abs_error_global"] + 1e-6


def test_coefficient_fixture_fields():
    doc = json.loads(FIXTURE.read_text())
    for e in doc["entries"]:
        assert {"op", "degree", "interval", "coefficients", "max_abs_error"} <= set(e)
        assert len(e["coefficients"]) == e["degree"] + 1
        assert e["interval"][0] == -e["interval"][1]


# ---------------------------------------------------------------- softmax

def test_softmax_structure_and_examples():
    g = unary("softmax", (2,), axis=-1)
    post = expand(g).graph
    c = op_counts(post)
    assert c["max"] == 1 and c["sum"] == 1
    assert np.allclose(run(g, [0.0, 0.0]), [0.5, 0.5], atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3), st.floats(-20, 20))
def test_softmax_shift_invariance(xs, c):
    g = unary("softmax", (3,), axis=-1)
    a = run(g, xs)
    b = run(g, np.array(xs) + c)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_softmax_divergence_without_clamp():
    g = unary("softmax", (2,), axis=-1)
    post = expand(g).graph
    knobs = {(n.site_id, "clamp"): 0 for n in g.nodes.values() if n.op == "softmax"}
    exp_sites = {s.site_id for s in expand(g).sites if s.pass_name == "exp"}
    knobs = {(s, "clamp"): 0 for s in exp_sites}
    bad = interpret(expand(g, knobs).graph, {"x": np.array([10.0, -590.0])})[0]
    good = interpret(post, {"x": np.array([10.0, -590.0])})[0]
    assert np.allclose(good, [1.0, 0.0], atol=1e-6)
    assert not np.allclose(bad, [1.0, 0.0], atol=1e-2)


# ---------------------------------------------------------------- Newton iterations

def test_reciprocal_of_one():
    # 1 is a fixed point of y <- y(2 - y); the exp-based initial guess reaches it after 7 steps
    g = unary("reciprocal")
    s = site_of(g, "reciprocal")
    errs = [abs(run(g, [1.0], {(s, "iters"): k})[0] - 1.0) for k in range(1, 13)]
    assert all(e <= 1e-6 for e in errs[6:])
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert 1.0 * (2 - 1.0 * 1.0) == 1.0


def test_rsqrt_of_four():
    g = unary("rsqrt")
    assert run(g, [4.0], {(site_of(g, "rsqrt"), "iters"): 10})[0] == pytest.approx(0.5, abs=1e-4)


def test_reciprocal_more_iterations_more_accurate():
    g = unary("reciprocal")
    s = site_of(g, "reciprocal")
    e1 = abs(run(g, [3.0], {(s, "iters"): 1})[0] - 1 / 3)
    e10 = abs(run(g, [3.0], {(s, "iters"): 10})[0] - 1 / 3)
    assert e1 > e10


@pytest.mark.parametrize("op,ref", [("reciprocal", lambda x: 1 / x), ("rsqrt", lambda x: x ** -0.5)])
def test_newton_fidelity_on_documented_domain(op, ref):
    g = unary(op, (400,))
    x = np.geomspace(0.01, 100, 400)
    rel = np.abs(run(g, x) / ref(x) - 1)
    assert rel.max() < 1e-3


def test_rsqrt_inner_exp_knob_is_tunable():
    g = unary("rsqrt")
    sites = expand(g).sites
    inner = [s.site_id for s in sites if s.pass_name == "exp"]
    assert len(inner) == 1 and inner[0].startswith(site_of(g, "rsqrt") + ".")
    post = expand(g, {(inner[0], "t"): 0}).graph
    assert validate(post, "post") == []
    assert np.isfinite(interpret(post, {"x": np.array([2.0])})[0]).all()


# ---------------------------------------------------------------- layernorm

def _layernorm(shape=(3, 6)):
    b = GraphBuilder()
    x = b.input("x", list(shape))
    b.output(b.op("layernorm", x, axis=-1, eps=1e-5))
    return run_frontend(b.build(), {"secrets": {"x": [0]}})


def test_layernorm_constant_row_is_zero():
    g = _layernorm()
    out = run(g, np.full((3, 6), 2.5))
    assert np.allclose(out, 0.0, atol=1e-9)


def test_layernorm_matches_oracle():
    g = _layernorm()
    x = np.random.default_rng(1).normal(0, 2, (3, 6))
    mu = x.mean(-1, keepdims=True)
    ref = (x - mu) / np.sqrt(((x - mu) ** 2).mean(-1, keepdims=True) + 1e-5)
    assert np.max(np.abs(run(g, x) - ref)) <= 1e-3


def test_layernorm_with_low_exp_knob_runs():
    g = _layernorm()
    inner = [s.site_id for s in expand(g).sites if s.pass_name == "exp"]
    post = expand(g, {(s, "t"): 0 for s in inner}).graph
    assert validate(post, "post") == []
    assert np.isfinite(interpret(post, {"x": np.random.default_rng(2).normal(size=(3, 6))})[0]).all()


# ---------------------------------------------------------------- max kernel

def test_max_tree_reference_examples():
    m, diffs = max_tree_reference(np.array([3.0, 1.0, 4.0, 1.0]))
    assert m == 4.0
    assert sum(d.size for d in diffs) == 3
    assert max_tree_plan(4) == [2, 1]
    m, diffs = max_tree_reference(np.array([7.0]))
    assert m == 7.0 and diffs == []
    assert max_tree_plan(1) == []


def test_max_is_not_expanded():
    g = unary("max", (4,), axis=-1)
    assert op_counts(expand(g).graph)["max"] == 1


@given(st.sampled_from([0, 1]), st.integers(-2**40, 2**40), st.integers(-2**40, 2**40))
def test_mux_identity(c, x, y):
    assert mux(c, x, y) == (x if c else y)


@settings(max_examples=50)
@given(st.lists(st.integers(-2**20, 2**20).map(lambda v: v / 64), min_size=1, max_size=33))
def test_max_tree_reference_is_max(xs):
    m, diffs = max_tree_reference(np.array(xs))
    assert m == max(xs)
    assert sum(d.size for d in diffs) == len(xs) - 1
    assert len(diffs) == math.ceil(math.log2(len(xs))) if len(xs) > 1 else not diffs


# ---------------------------------------------------------------- cost monotonicity

def _bytes(g, knobs):
    post = expand(g, knobs).graph
    return sum(static_cost(lower_pair(post, LowerConfig())).bytes)


@pytest.mark.parametrize("op", ["exp", "gelu", "silu", "sigmoid", "reciprocal", "rsqrt"])
def test_knob_decrement_never_increases_cost(op):
    g = unary(op, (5,))
    site = site_of(g, op)
    p = next(p for p in builtin_passes().values() if op in p.patterns)
    for k in p.knobs:
        costs = [_bytes(g, {(site, k.name): v}) for v in range(k.hi, k.lo - 1, -1)]
        assert all(a >= b for a, b in zip(costs, costs[1:])), (k.name, costs)
        assert costs[0] > costs[-1]
