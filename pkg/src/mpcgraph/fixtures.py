"""Desk-scale models and datasets shipped with the package.

Each builder returns a ``Fixture``: the raw graph, its ownership
annotation, a dataset with a leading sample axis, and optional labels.
Everything is derived from a seed, so fixtures are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frontend import Annotation, run_frontend
from .interp import interpret_batch
from .ir import Graph, GraphBuilder


@dataclass
class Fixture:
    name: str
    graph: Graph
    annotation: dict
    dataset: dict[str, np.ndarray]
    labels: np.ndarray | None = None
    notes: dict = field(default_factory=dict)

    def annotated(self) -> Graph:
        return run_frontend(self.graph, Annotation.from_json(self.annotation))

    def sample(self, k: int = 0) -> dict[str, np.ndarray]:
        return {n: v[k] for n, v in self.dataset.items()}


# ---------------------------------------------------------------- MLP

def _train_mlp(x, y, hidden, rng, steps=400, lr=0.5):
    d = x.shape[1]
    w1 = rng.normal(0, 1 / np.sqrt(d), (d, hidden))
    b1 = np.zeros(hidden)
    w2 = rng.normal(0, 1 / np.sqrt(hidden), (hidden, 2))
    b2 = np.zeros(2)
    onehot = np.eye(2)[y]
    for _ in range(steps):
        h = x @ w1 + b1
        a = np.maximum(h, 0)
        z = a @ w2 + b2
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        g = (p - onehot) / len(x)
        gw2, gb2 = a.T @ g, g.sum(0)
        ga = g @ w2.T * (h > 0)
        gw1, gb1 = x.T @ ga, ga.sum(0)
        w1 -= lr * gw1
        b1 -= lr * gb1
        w2 -= lr * gw2
        b2 -= lr * gb2
    return w1, b1, w2, b2


def mlp(samples: int = 128, hidden: int = 8, seed: int = 0) -> Fixture:
    """2-layer MLP, ReLU then softmax, on two Gaussian blobs in 4 dimensions.

    Party 0 owns the feature vector ``x``; party 1 owns the weights.
    """
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, samples)
    centers = np.array([[1.0, -1.0, 0.5, 0.0], [-1.0, 1.0, -0.5, 0.5]])
    x = centers[y] + rng.normal(0, 0.8, (samples, 4))
    w1, b1, w2, b2 = _train_mlp(x, y, hidden, rng)

    b = GraphBuilder()
    xin = b.input("x", [4])
    W1 = b.input("w1", [4, hidden])
    B1 = b.input("b1", [hidden])
    W2 = b.input("w2", [hidden, 2])
    B2 = b.input("b2", [2])
    h = b.op("relu", b.op("linear", xin, W1, B1))
    b.output(b.op("softmax", b.op("linear", h, W2, B2), axis=-1))
    rep = lambda a: np.broadcast_to(a, (samples,) + a.shape).copy()  # noqa: E731
    data = {"x": x, "w1": rep(w1), "b1": rep(b1), "w2": rep(w2), "b2": rep(b2)}
    ann = {"secrets": {"x": [0], "w1": [1], "b1": [1], "w2": [1], "b2": [1]}}
    return Fixture("mlp", b.build(), ann, data, y)


# ---------------------------------------------------------------- transformer block

def transformer_block(samples: int = 256, seq: int = 8, d_model: int = 16, d_ff: int = 32,
                      classes: int = 4, seed: int = 0) -> Fixture:
    """LayerNorm, causal single-head attention, GELU MLP, mean-pool and a softmax head.

    The client (party 0) owns the token embeddings; weights are public.
    Masked attention scores are offset by -1000, which makes the softmax
    exponent sensitive to the exp clamp.  Labels are the exact model's
    predictions, so the loss measures agreement with the float model.
    """
    rng = np.random.default_rng(seed)
    w = lambda *s: rng.normal(0, 1 / np.sqrt(s[0]), s)  # noqa: E731
    wq, wk, wv, wo = w(d_model, d_model), w(d_model, d_model), w(d_model, d_model), w(d_model, d_model)
    w1, w2, wc = w(d_model, d_ff), w(d_ff, d_model), w(d_model, classes) * 3
    b1 = rng.normal(0, 0.1, d_ff)
    g1, g2 = 1 + rng.normal(0, 0.1, d_model), 1 + rng.normal(0, 0.1, d_model)
    mask = np.triu(np.full((seq, seq), -1000.0), k=1)

    b = GraphBuilder()
    x = b.input("x", [seq, d_model])
    c = b.const
    h = b.op("layernorm", x, c(g1), c(np.zeros(d_model)), axis=-1, eps=1e-5)
    q = b.op("matmul", h, c(wq))
    k = b.op("matmul", h, c(wk))
    v = b.op("matmul", h, c(wv))
    scores = b.op("mul", b.op("matmul", q, b.op("transpose", k, dims=[-2, -1])), c(1 / np.sqrt(d_model)))
    att = b.op("softmax", b.op("add", scores, c(mask)), axis=-1)
    x2 = b.op("add", x, b.op("matmul", b.op("matmul", att, v), c(wo)))
    h2 = b.op("layernorm", x2, c(g2), c(np.zeros(d_model)), axis=-1, eps=1e-5)
    m = b.op("matmul", b.op("gelu", b.op("linear", h2, c(w1), c(b1))), c(w2))
    x3 = b.op("add", x2, m)
    pooled = b.op("mean", x3, axis=0)
    b.output(b.op("softmax", b.op("matmul", pooled, c(wc)), axis=-1))
    g = b.build()

    data = {"x": rng.normal(0, 1, (samples, seq, d_model))}
    ann = {"secrets": {"x": [0]}}
    fx = Fixture("transformer_block", g, ann, data)
    fx.labels = np.argmax(interpret_batch(g, data)[0], axis=-1)
    return fx


# ---------------------------------------------------------------- two softmaxes, unequal sensitivity

def two_softmax(samples: int = 64, n: int = 8, seed: int = 0) -> Fixture:
    """Two softmax sites whose inputs have very different spreads.

    Site A sees logits in [-0.5, 0.5] scaled into a sum that the output
    barely depends on; site B feeds a sharp distribution straight to the
    output.  Any exp knob setting works for A while B needs accurate exp.
    """
    rng = np.random.default_rng(seed)
    b = GraphBuilder()
    xa = b.input("xa", [n])
    xb = b.input("xb", [n])
    pa = b.op("softmax", xa, axis=-1)
    pb = b.op("softmax", xb, axis=-1)
    # A contributes a small perturbation; B carries the prediction
    mixed = b.op("add", b.op("mul", pa, b.const(np.full(n, 0.01))), b.op("mul", pb, b.const(np.full(n, 8.0))))
    b.output(b.op("softmax", mixed, axis=-1))
    g = b.build()
    data = {"xa": rng.uniform(-0.5, 0.5, (samples, n)), "xb": rng.normal(0, 2.5, (samples, n))}
    ann = {"secrets": {"xa": [0], "xb": [0]}}
    fx = Fixture("two_softmax", g, ann, data)
    fx.labels = np.argmax(interpret_batch(g, data)[0], axis=-1)
    return fx


# ---------------------------------------------------------------- random small graphs

# building block -> nodes it adds
_COST = {"relu": 1, "neg_scale": 2, "max_last": 4, "mean_last": 2, "square_gate": 4,
         "add": 1, "sub": 1, "mul_scaled": 3, "matmul": 8}


def random_graph(rng: np.random.Generator, max_nodes: int = 12, max_inputs: int = 3) -> Fixture:
    """A random post-approximation-ready graph over small tensors.

    Values stay within a few units: inputs are drawn in [-4, 4], products
    are rescaled by 1/4, and comparison outputs only appear as ReLU gates
    so no discontinuity is exposed directly at an output.
    """
    b = GraphBuilder()
    d = int(rng.integers(2, 5))
    shape = [d] if rng.random() < 0.5 else [2, d]
    owners = {}
    vals = []
    n_in = int(rng.integers(1, max_inputs + 1))
    for k in range(n_in):
        name = f"in{k}"
        vals.append(b.input(name, shape))
        owners[name] = [int(rng.integers(0, 2))]
    if rng.random() < 0.3:
        vals.append(b.const(rng.uniform(-2, 2, shape)))
    while True:
        room = max_nodes - len(b._nodes)
        kinds = [k for k, c in _COST.items() if c <= room]
        if not kinds or (len(vals) > n_in and rng.random() < 0.1):
            break
        kind = kinds[int(rng.integers(len(kinds)))]
        x = vals[int(rng.integers(len(vals)))]
        y = vals[int(rng.integers(len(vals)))]
        if kind == "relu":
            v = b.op("relu", x)
        elif kind == "neg_scale":
            v = b.op("mul", x, b.const(np.array([-0.5])))
        elif kind == "max_last":
            v = b.op("max", x, axis=-1, keepdims=True)
            v = b.op("add", x, v)
            v = b.op("mul", v, b.const(np.array([0.5])))
        elif kind == "mean_last":
            v = b.op("sub", x, b.op("mean", x, axis=-1, keepdims=True))
        elif kind == "square_gate":
            v = b.op("mul", b.op("mul", x, b.op("relu", y)), b.const(np.array([0.25])))
        elif kind in ("add", "sub"):
            v = b.op(kind, x, y)
        elif kind == "mul_scaled":
            v = b.op("mul", b.op("mul", x, y), b.const(np.array([0.25])))
        else:
            w = b.op("transpose", y, dims=[-2, -1]) if len(shape) == 2 else y
            v = b.op("matmul", x, w) if len(shape) == 1 else b.op("matmul", b.op("transpose", x, dims=[-2, -1]), y)
            if len(shape) == 1:  # vector dot: broadcast back to the shape
                v = b.op("add", b.op("mul", x, b.const(np.array([0.0]))), b.op("mul", v, b.const(np.array([0.25]))))
            else:
                v = b.op("mul", b.op("matmul", x, b.op("mul", v, b.const(np.array([0.125])))), b.const(np.array([0.5])))
        vals.append(v)
    b.output(vals[-1])
    g = b.build()
    data = {f"in{k}": rng.uniform(-4, 4, (1,) + tuple(shape)) for k in range(n_in)}
    return Fixture("random", g, {"secrets": owners}, data)
