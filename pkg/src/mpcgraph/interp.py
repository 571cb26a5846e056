"""Plaintext float64 reference runtime for graphs before lowering."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import opdefs
from .ir import Graph, GraphError, Node, topo_order

Hook = Callable[[Node, list, np.ndarray], None]


def interpret(graph: Graph, inputs: Mapping[str, np.ndarray], hook: Hook | None = None,
              *, return_all: bool = False):
    """Evaluate every node in double precision.

    ``hook(node, input_values, output_value)`` is called after each node; the
    range recorder uses it to observe comparison inputs.  With ``return_all``
    the per-node value map is returned instead of the output list.
    """
    values: dict[int, np.ndarray] = {}
    for nid in topo_order(graph):
        node = graph.nodes[nid]
        if node.op in ("mul_mpc", "ltz_mpc"):
            raise GraphError(f"operator {node.op} cannot be interpreted in plaintext (node {nid})")
        args = [values[i] for i in node.inputs]
        if node.op == "input":
            name = node.attrs["name"]
            if name not in inputs:
                raise GraphError(f"missing input {name!r}")
            val = np.asarray(inputs[name], dtype=np.float64)
            if val.shape != node.meta.shape:
                raise GraphError(f"input {name!r} has shape {val.shape}, expected {node.meta.shape}")
        elif node.op == "const":
            val = np.asarray(node.attrs["value"], dtype=np.float64).reshape(node.meta.shape)
        else:
            with np.errstate(all="ignore"):
                try:
                    val = opdefs.evaluate(node.op, args, node.attrs)
                except ValueError as exc:
                    raise GraphError(f"node {nid} ({node.op}): {exc}") from None
        if hook is not None:
            hook(node, args, val)
        values[nid] = val
    if return_all:
        return values
    return [values[o] for o in graph.outputs]


_ELEMENTWISE = frozenset({"add", "sub", "mul", "ge", "gt", "le", "lt", "ltz", "relu", "exp", "gelu",
                          "silu", "sigmoid", "reciprocal", "rsqrt", "encode", "trunc", "reveal",
                          "zeros_like", "full_like"})
_REDUCE = frozenset({"sum", "mean", "max"})


def _lift(x: np.ndarray, per_ndim: int, ndim: int) -> np.ndarray:
    """Insert unit axes after the sample axis so a batched value broadcasts at rank ``ndim``."""
    if per_ndim >= ndim:
        return x
    return x.reshape((x.shape[0],) + (1,) * (ndim - per_ndim) + x.shape[1:])


def _norm(axis, nd: int):
    return axis % nd + 1 if nd else 1


def _eval_batched(node: Node, graph: Graph, args: list, batched: list[bool], count: int):
    """Evaluate one node with a leading sample axis on the batched arguments.

    Returns None when the operator/argument combination has no vectorised
    form; the caller then loops over samples.
    """
    op, attrs = node.op, dict(node.attrs)
    nds = [len(graph.nodes[i].meta.shape) for i in node.inputs]
    out_nd = len(node.meta.shape)
    if op in _ELEMENTWISE:
        xs = [_lift(a, nd, out_nd) if b else a for a, b, nd in zip(args, batched, nds)]
        return opdefs.evaluate(op, xs, attrs)
    if op in _REDUCE:
        axis = attrs.get("axis")
        if axis is None:
            attrs["axis"] = list(range(1, nds[0] + 1))
        elif isinstance(axis, list):
            attrs["axis"] = [_norm(a, nds[0]) for a in axis]
        else:
            attrs["axis"] = _norm(axis, nds[0])
        return opdefs.evaluate(op, args, attrs)
    if op in ("softmax", "layernorm"):
        attrs["axis"] = _norm(attrs.get("axis", -1), nds[0])
        if not batched[0]:
            return None
        xs = [args[0]] + [_lift(a, nd, nds[0]) if b else a for a, b, nd in zip(args[1:], batched[1:], nds[1:])]
        return opdefs.evaluate(op, xs, attrs)
    if op in ("avgpool", "maxpool"):
        return opdefs.evaluate(op, args, attrs)
    if op in ("matmul", "linear", "conv2d"):
        if batched[1] or (op == "linear" and len(args) > 2 and batched[2]):
            return None
        return opdefs.evaluate(op, args, attrs)
    if op == "reshape":
        attrs["shape"] = [count] + list(attrs["shape"])
        return opdefs.evaluate(op, args, attrs)
    if op == "transpose":
        d0, d1 = attrs.get("dims", (-2, -1))
        attrs["dims"] = [_norm(d0, nds[0]), _norm(d1, nds[0])]
        return opdefs.evaluate(op, args, attrs)
    if op == "permute":
        attrs["dims"] = [0] + [_norm(d, nds[0]) for d in attrs["dims"]]
        return opdefs.evaluate(op, args, attrs)
    if op == "flatten":
        attrs["start_dim"] = _norm(attrs.get("start_dim", 0), max(nds[0], 1))
        return opdefs.evaluate(op, args, attrs)
    if op == "stack" and all(batched):
        attrs["axis"] = _norm(attrs.get("axis", 0), out_nd)
        return opdefs.evaluate(op, args, attrs)
    return None


def interpret_batch(graph: Graph, dataset: Mapping[str, np.ndarray], hook: Hook | None = None):
    """Evaluate every sample of a dataset whose arrays carry a leading sample axis.

    Without a hook the graph is evaluated once with the sample axis carried
    through every operator, looping per sample only where an operator has no
    vectorised form.  With a hook, ``interpret`` runs sample by sample so the
    hook sees per-sample values.
    """
    names = [name for name, _ in graph.inputs]
    count = len(next(iter(dataset.values())))
    if hook is not None:
        outs: list[list[np.ndarray]] = [[] for _ in graph.outputs]
        for k in range(count):
            res = interpret(graph, {n: dataset[n][k] for n in names}, hook)
            for slot, v in zip(outs, res):
                slot.append(v)
        return [np.stack(o) for o in outs]

    values: dict[int, np.ndarray] = {}
    batched: dict[int, bool] = {}
    for nid in topo_order(graph):
        node = graph.nodes[nid]
        if node.op in ("mul_mpc", "ltz_mpc"):
            raise GraphError(f"operator {node.op} cannot be interpreted in plaintext (node {nid})")
        if node.op == "input":
            name = node.attrs["name"]
            if name not in dataset:
                raise GraphError(f"missing input {name!r}")
            val = np.asarray(dataset[name], dtype=np.float64)
            if val.shape != (count,) + node.meta.shape:
                raise GraphError(f"input {name!r} has shape {val.shape[1:]}, expected {node.meta.shape}")
            values[nid], batched[nid] = val, True
            continue
        if node.op == "const":
            values[nid] = np.asarray(node.attrs["value"], dtype=np.float64).reshape(node.meta.shape)
            batched[nid] = False
            continue
        args = [values[i] for i in node.inputs]
        flags = [batched[i] for i in node.inputs]
        with np.errstate(all="ignore"):
            try:
                if not any(flags):
                    val = opdefs.evaluate(node.op, args, node.attrs)
                else:
                    val = _eval_batched(node, graph, args, flags, count)
                    if val is None:
                        val = np.stack([opdefs.evaluate(node.op, [a[k] if f else a for a, f in zip(args, flags)],
                                                        node.attrs) for k in range(count)])
            except ValueError as exc:
                raise GraphError(f"node {nid} ({node.op}): {exc}") from None
        values[nid], batched[nid] = val, any(flags)
    out = []
    for o in graph.outputs:
        v = values[o]
        out.append(v if batched[o] else np.broadcast_to(v, (count,) + v.shape).copy())
    return out
