"""Tensor-graph intermediate representation shared by every compiler stage."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import opdefs
from .opdefs import OPS

INT_WIDTHS = (8, 16, 32, 64)
FLOAT_WIDTHS = (32, 64)


class GraphError(Exception):
    """Structural problem with a graph (cycle, dangling reference, bad shape)."""


class GraphParseError(GraphError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class DType:
    kind: str  # "int" | "float" | "bool"
    width: int = 64

    def __post_init__(self):
        if self.kind == "int" and self.width not in INT_WIDTHS:
            raise ValueError(f"invalid int width {self.width}")
        if self.kind == "float" and self.width not in FLOAT_WIDTHS:
            raise ValueError(f"invalid float width {self.width}")
        if self.kind == "bool" and self.width != 1:
            object.__setattr__(self, "width", 1)
        if self.kind not in ("int", "float", "bool"):
            raise ValueError(f"invalid dtype kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str | DType) -> DType:
        if isinstance(text, DType):
            return text
        if text == "bool":
            return cls("bool", 1)
        for kind in ("int", "float"):
            if text.startswith(kind) and text[len(kind):].isdigit():
                return cls(kind, int(text[len(kind):]))
        raise ValueError(f"unknown dtype {text!r}")

    @property
    def is_float(self) -> bool:
        return self.kind == "float"

    def __str__(self) -> str:
        return "bool" if self.kind == "bool" else f"{self.kind}{self.width}"


FLOAT64 = DType("float", 64)
INT64 = DType("int", 64)
BOOL = DType("bool", 1)


@dataclass(frozen=True)
class TensorMeta:
    shape: tuple[int, ...]
    dtype: DType = FLOAT64

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(d < 1 for d in self.shape):
            raise ValueError(f"non-positive dimension in shape {self.shape}")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True)
class BackType:
    """Backend type: security label, base type and fixed-point scale."""

    label: str  # "pub" | "secret"
    dtype: DType
    scale: int = 1
    ring_width: int = 64

    @property
    def secret(self) -> bool:
        return self.label == "secret"

    def to_json(self) -> dict:
        return {"label": self.label, "dtype": str(self.dtype), "scale": self.scale,
                "ring_width": self.ring_width}

    @classmethod
    def from_json(cls, d: Mapping) -> BackType:
        return cls(d["label"], DType.parse(d["dtype"]), int(d["scale"]), int(d.get("ring_width", 64)))


PUBLIC = frozenset({0, 1})


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    inputs: tuple[int, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict)
    meta: TensorMeta | None = None
    owner: frozenset | None = None
    back_type: BackType | None = None
    site_id: str = ""

    @property
    def category(self) -> str:
        return opdefs.category(self.op)


class Graph:
    """Immutable DAG of nodes with named inputs and ordered outputs."""

    def __init__(self, nodes: Iterable[Node], inputs: Sequence[tuple[str, int]],
                 outputs: Sequence[int]):
        self.nodes: dict[int, Node] = {n.id: n for n in nodes}
        self.inputs: tuple[tuple[str, int], ...] = tuple((str(a), int(b)) for a, b in inputs)
        self.outputs: tuple[int, ...] = tuple(int(o) for o in outputs)

    def __getitem__(self, nid: int) -> Node:
        return self.nodes[nid]

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Graph) and self.nodes == other.nodes
                and self.inputs == other.inputs and self.outputs == other.outputs)

    def __repr__(self) -> str:
        return f"Graph({len(self.nodes)} nodes, inputs={list(self.inputs)}, outputs={list(self.outputs)})"

    @property
    def input_ids(self) -> dict[str, int]:
        return dict(self.inputs)

    def users(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {nid: [] for nid in self.nodes}
        for n in self.nodes.values():
            for i in n.inputs:
                if i in out:
                    out[i].append(n.id)
        return out

    def with_nodes(self, nodes: Iterable[Node]) -> Graph:
        return Graph(nodes, self.inputs, self.outputs)

    def map_nodes(self, fn) -> Graph:
        return self.with_nodes(fn(n) for n in self.nodes.values())

    def count_ops(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for n in self.nodes.values():
            counts[n.op] = counts.get(n.op, 0) + 1
        return counts


def topo_order(graph: Graph) -> list[int]:
    """Kahn's algorithm with ascending-id tie-break."""
    indeg = {nid: 0 for nid in graph.nodes}
    users: dict[int, list[int]] = {nid: [] for nid in graph.nodes}
    for n in graph.nodes.values():
        for i in n.inputs:
            if i not in graph.nodes:
                raise GraphError(f"dangling reference at node {n.id}")
            indeg[n.id] += 1
            users[i].append(n.id)
    ready = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for u in users[nid]:
            indeg[u] -= 1
            if indeg[u] == 0:
                heapq.heappush(ready, u)
    if len(order) != len(graph.nodes):
        stuck = sorted(nid for nid, d in indeg.items() if d > 0)
        raise GraphError(f"cycle detected among nodes {stuck}")
    return order


# ---------------------------------------------------------------- shape/dtype inference

_BOOL_OUT = {"ltz", "ge", "gt", "le", "lt"}
_FLOAT_OUT = {"mean", "avgpool", "exp", "gelu", "silu", "sigmoid", "reciprocal", "rsqrt",
              "softmax", "layernorm"}
_INT_OUT = {"encode", "trunc", "mul_mpc", "ltz_mpc"}


def _infer_dtype(op: str, in_types: Sequence[DType], attrs: Mapping) -> DType:
    if op in _BOOL_OUT:
        return BOOL
    if op in _INT_OUT:
        return INT64
    if op in _FLOAT_OUT:
        return FLOAT64
    if op == "full_like":
        v = attrs["value"]
        return in_types[0] if float(v).is_integer() and not in_types[0].is_float else FLOAT64
    if op in ("zeros_like",) or opdefs.category(op) in (opdefs.SHAPE_ONLY, opdefs.MAX, opdefs.REVEAL) \
            or op == "relu":
        return in_types[0]
    if any(t.is_float for t in in_types):
        return FLOAT64
    return INT64


def infer_meta(op: str, in_metas: Sequence[TensorMeta], attrs: Mapping) -> TensorMeta:
    """Infer output metadata; raises GraphError on shape-rule violations."""
    if op not in OPS:
        raise GraphError(f"unknown operator {op!r}")
    d = OPS[op]
    if d.arity is not None and len(in_metas) != d.arity:
        raise GraphError(f"{op} expects {d.arity} inputs, got {len(in_metas)}")
    if op == "input":
        return TensorMeta(tuple(attrs["shape"]), DType.parse(attrs.get("dtype", "float64")))
    if op == "const":
        arr = np.asarray(attrs["value"], dtype=np.float64)
        return TensorMeta(arr.shape, DType.parse(attrs.get("dtype", "float64")))
    dtype = _infer_dtype(op, [m.dtype for m in in_metas], attrs)
    if op in ("mul_mpc", "ltz_mpc"):
        kernel_op = {"mul_mpc": attrs.get("kind", "mul"), "ltz_mpc": "ltz"}[op]
    else:
        kernel_op = op
    probes = [np.ones(m.shape) for m in in_metas]
    try:
        with np.errstate(all="ignore"):
            out = opdefs.evaluate(kernel_op, probes, dict(attrs))
    except GraphError:
        raise
    except (ValueError, IndexError, TypeError, KeyError, np.exceptions.AxisError) as exc:
        raise GraphError(str(exc)) from None
    try:
        return TensorMeta(out.shape, dtype)
    except ValueError as exc:
        raise GraphError(str(exc)) from None


# ---------------------------------------------------------------- builder

class GraphBuilder:
    """Incrementally builds a graph with sequential ids and inferred metadata."""

    def __init__(self, start_id: int = 0):
        self._nodes: dict[int, Node] = {}
        self._inputs: list[tuple[str, int]] = []
        self._outputs: list[int] = []
        self._next = start_id

    def meta(self, nid: int) -> TensorMeta:
        return self._nodes[nid].meta

    def node(self, nid: int) -> Node:
        return self._nodes[nid]

    def add(self, op: str, inputs: Sequence[int] = (), attrs: Mapping | None = None, *,
            site_id: str | None = None, owner=None, meta: TensorMeta | None = None,
            back_type: BackType | None = None) -> int:
        # attrs are stored in JSON form so a serialize round-trip is an identity
        attrs = _jsonable(dict(attrs or {}))
        inputs = tuple(int(i) for i in inputs)
        for i in inputs:
            if i not in self._nodes:
                raise GraphError(f"dangling reference at node {self._next}")
        if meta is None:
            meta = infer_meta(op, [self._nodes[i].meta for i in inputs], attrs)
        nid = self._next
        self._next += 1
        self._nodes[nid] = Node(nid, op, inputs, attrs, meta,
                                frozenset(owner) if owner is not None else None,
                                back_type, site_id if site_id is not None else f"{op}/{nid}")
        return nid

    def input(self, name: str, shape: Sequence[int], dtype: str = "float64", **kw) -> int:
        nid = self.add("input", (), {"name": name, "shape": list(shape), "dtype": dtype}, **kw)
        self._inputs.append((name, nid))
        return nid

    def const(self, value, dtype: str | None = None, **kw) -> int:
        arr = np.asarray(value)
        if dtype is None:
            dtype = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return self.add("const", (), {"value": arr.tolist(), "dtype": dtype}, **kw)

    def op(self, op: str, *inputs: int, **attrs) -> int:
        return self.add(op, inputs, attrs)

    def output(self, nid: int) -> int:
        self._outputs.append(nid)
        return nid

    def build(self) -> Graph:
        return Graph(self._nodes.values(), self._inputs, self._outputs)


# ---------------------------------------------------------------- stage predicates

def is_pre_approx(graph: Graph) -> bool:
    return all(n.op not in opdefs.MPC_ONLY for n in graph.nodes.values())


def is_public(node: Node) -> bool:
    return node.owner is not None and node.owner >= PUBLIC


def is_post_approx(graph: Graph) -> bool:
    """Only supported-set kinds remain, except operators on public values.

    Public-only composites are evaluated in plaintext by both parties at
    lowering time, so they do not need an approximation.
    """
    return all(n.op in opdefs.SUPPORTED or (n.op in opdefs.COMPOSITES and is_public(n))
               for n in graph.nodes.values())


STAGES = {"pre": is_pre_approx, "post": is_post_approx, "lowered": lambda g: True}


def validate(graph: Graph, stage: str | None = None) -> list[str]:
    """Return every structural violation; an empty list means the graph is well formed."""
    errors: list[str] = []
    seen_sites: dict[str, int] = {}
    for n in graph.nodes.values():
        if n.op not in OPS:
            errors.append(f"unknown operator {n.op!r} at node {n.id}")
            continue
        dangling = [i for i in n.inputs if i not in graph.nodes]
        for i in dangling:
            errors.append(f"dangling reference at node {n.id} (input {i})")
        if n.site_id in seen_sites:
            errors.append(f"duplicate site_id {n.site_id!r} at node {n.id}")
        seen_sites[n.site_id] = n.id
        if dangling or n.meta is None:
            if n.meta is None:
                errors.append(f"missing metadata at node {n.id}")
            continue
        try:
            expect = infer_meta(n.op, [graph.nodes[i].meta for i in n.inputs], n.attrs)
        except GraphError as exc:
            errors.append(f"node {n.id} ({n.op}): {exc}")
            continue
        except KeyError as exc:
            errors.append(f"node {n.id} ({n.op}): missing attribute {exc.args[0]!r}")
            continue
        except AttributeError:
            continue
        if expect.shape != n.meta.shape:
            errors.append(f"node {n.id} ({n.op}): shape mismatch: metadata {n.meta.shape} "
                          f"but inferred {expect.shape}")
    for o in graph.outputs:
        if o not in graph.nodes:
            errors.append(f"output {o} does not exist")
    for name, nid in graph.inputs:
        if nid not in graph.nodes or graph.nodes[nid].op != "input":
            errors.append(f"graph input {name!r} does not name an input node")
    try:
        topo_order(graph)
    except GraphError as exc:
        if "cycle" in str(exc):
            errors.append(str(exc))
    if stage is not None and not errors:
        check = STAGES[stage]
        if not check(graph):
            bad = _stage_offenders(graph, stage)
            for n in bad:
                errors.append(f"operator {n.op} not allowed at stage {stage!r} (node {n.id}, site {n.site_id})")
    return errors


def _stage_offenders(graph: Graph, stage: str) -> list[Node]:
    if stage == "pre":
        return [n for n in graph.nodes.values() if n.op in opdefs.MPC_ONLY]
    if stage == "post":
        return [n for n in graph.nodes.values()
                if not (n.op in opdefs.SUPPORTED or (n.op in opdefs.COMPOSITES and is_public(n)))]
    return []


def unsupported_nodes(graph: Graph) -> list[Node]:
    return _stage_offenders(graph, "post")


# ---------------------------------------------------------------- serialization

def _node_to_json(n: Node) -> dict:
    d: dict[str, Any] = {"id": n.id, "op": n.op, "inputs": list(n.inputs), "attrs": dict(n.attrs),
                         "meta": {"shape": list(n.meta.shape), "dtype": str(n.meta.dtype)},
                         "site_id": n.site_id}
    if n.owner is not None:
        d["owner"] = sorted(n.owner)
    if n.back_type is not None:
        d["back_type"] = n.back_type.to_json()
    return d


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def to_json(graph: Graph) -> dict:
    return _jsonable({
        "version": 1,
        "inputs": [{"name": name, "id": nid} for name, nid in graph.inputs],
        "outputs": list(graph.outputs),
        "nodes": [_node_to_json(graph.nodes[nid]) for nid in sorted(graph.nodes)],
    })


def serialize(graph: Graph) -> str:
    return json.dumps(to_json(graph), indent=1, sort_keys=True)


def _require(d: Mapping, key: str, where: str):
    if key not in d:
        raise GraphParseError(f"missing key {key!r} in {where}")
    return d[key]


def from_json(doc: Mapping) -> Graph:
    if not isinstance(doc, Mapping):
        raise GraphParseError("graph document must be a JSON object")
    nodes_doc = _require(doc, "nodes", "graph")
    outputs = _require(doc, "outputs", "graph")
    inputs = _require(doc, "inputs", "graph")
    nodes = []
    for k, nd in enumerate(nodes_doc):
        where = f"node #{k}"
        meta_doc = _require(nd, "meta", where)
        try:
            meta = TensorMeta(tuple(_require(meta_doc, "shape", where)),
                              DType.parse(_require(meta_doc, "dtype", where)))
            owner = frozenset(nd["owner"]) if "owner" in nd else None
            bt = BackType.from_json(nd["back_type"]) if "back_type" in nd else None
        except (ValueError, TypeError, KeyError) as exc:
            raise GraphParseError(f"bad metadata in {where}: {exc}") from None
        nodes.append(Node(int(_require(nd, "id", where)), str(_require(nd, "op", where)),
                          tuple(int(i) for i in nd.get("inputs", [])),
                          dict(nd.get("attrs", {})), meta, owner, bt,
                          str(nd.get("site_id", f"{nd['op']}/{nd['id']}"))))
    return Graph(nodes, [(i["name"], i["id"]) for i in inputs], outputs)


def deserialize(text: str) -> Graph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(exc.msg, exc.lineno, exc.colno) from None
    return from_json(doc)


def relabel(graph: Graph, mapping: Mapping[int, int]) -> Graph:
    """Renumber node ids; used to check id-independence of evaluation."""
    nodes = [replace(n, id=mapping[n.id], inputs=tuple(mapping[i] for i in n.inputs))
             for n in graph.nodes.values()]
    return Graph(nodes, [(name, mapping[i]) for name, i in graph.inputs],
                 [mapping[o] for o in graph.outputs])
