"""Single-node pattern rewriting with tunable knobs, applied to a fixpoint."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .. import opdefs
from ..frontend import propagate_ownership
from ..ir import PUBLIC, Graph, GraphBuilder, Node, is_public, topo_order, unsupported_nodes

KnobAssignment = dict  # (site_id, knob_name) -> int


class ApproxError(Exception):
    pass


@dataclass(frozen=True)
class Knob:
    name: str
    lo: int
    hi: int
    value: int
    tunable: bool = True

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"knob {self.name}: hi < lo")
        if not self.lo <= self.value <= self.hi:
            raise ValueError(f"knob {self.name}={self.value} outside [{self.lo}, {self.hi}]")


class Emitter:
    """Builds a replacement subgraph inside the round's builder.

    Emitted nodes are addressed ``<parent site>.<k>``; the node returned as
    the replacement's result inherits the parent's site id.
    """

    def __init__(self, builder: GraphBuilder, parent: Node, owner):
        self.b = builder
        self.parent = parent
        self.owner = owner
        self.emitted: list[int] = []

    def _site(self) -> str:
        return f"{self.parent.site_id}.{len(self.emitted)}"

    def add_node(self, op: str, inputs: Sequence[int], **attrs) -> int:
        nid = self.b.add(op, inputs, attrs, site_id=self._site())
        self.emitted.append(nid)
        return nid

    def const(self, value, dtype: str | None = None) -> int:
        arr = np.asarray(value)
        if dtype is None:
            dtype = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        nid = self.b.const(arr, dtype, site_id=self._site(), owner=PUBLIC)
        self.emitted.append(nid)
        return nid

    # arithmetic helpers; literal operands are wrapped with lit(value)
    def _arg(self, v) -> int:
        if isinstance(v, _Lit):
            return self.const(v.value, v.dtype)
        return int(v)

    def add(self, a, b):
        return self.add_node("add", (self._arg(a), self._arg(b)))

    def sub(self, a, b):
        return self.add_node("sub", (self._arg(a), self._arg(b)))

    def mul(self, a, b):
        return self.add_node("mul", (self._arg(a), self._arg(b)))

    def ltz(self, a):
        return self.add_node("ltz", (self._arg(a),))


@dataclass(frozen=True)
class _Lit:
    value: object
    dtype: str | None = None


def lit(value, dtype: str | None = None) -> _Lit:
    """Literal public constant operand for Emitter helpers."""
    return _Lit(value, dtype)


Replacement = Callable[[Emitter, Node, list, Mapping[str, int]], int]


def _always(node: Node) -> bool:
    return True


def secret_input(node: Node) -> bool:
    """Filter: the first argument is not public."""
    return not node.owner or not node.owner >= PUBLIC


@dataclass(frozen=True)
class PassDescriptor:
    name: str
    patterns: frozenset
    replacement: Replacement
    knobs: tuple[Knob, ...] = ()
    filter: Callable[[Node], bool] = _always
    description: str = ""

    def knob(self, name: str) -> Knob:
        for k in self.knobs:
            if k.name == name:
                return k
        raise KeyError(f"pass {self.name!r} has no knob {name!r}")

    def configure(self, values: Mapping[str, int] | None = None,
                  tunable: Iterable[str] | bool | None = None) -> PassDescriptor:
        """Copy with new current knob values and/or a new tunable set."""
        values = dict(values or {})
        unknown = set(values) - {k.name for k in self.knobs}
        if unknown:
            raise ApproxError(f"pass {self.name!r} has no knob(s) {sorted(unknown)}")
        if tunable is True or tunable is None:
            tset = {k.name for k in self.knobs if (k.tunable if tunable is None else True)}
        elif tunable is False:
            tset = set()
        else:
            tset = set(tunable)
        knobs = tuple(replace(k, value=values.get(k.name, k.value), tunable=k.name in tset)
                      for k in self.knobs)
        return replace(self, knobs=knobs)

    def matches(self, node: Node) -> bool:
        return node.op in self.patterns and self.filter(node)


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    pass_name: str
    values: tuple[tuple[str, int], ...]


@dataclass
class RewriteResult:
    graph: Graph
    sites: list[SiteRecord] = field(default_factory=list)

    def site_passes(self) -> dict[str, str]:
        return {s.site_id: s.pass_name for s in self.sites}


def resolve_knobs(p: PassDescriptor, site: str, knobs: Mapping) -> dict[str, int]:
    out = {}
    for k in p.knobs:
        v = int(knobs.get((site, k.name), k.value))
        if not k.lo <= v <= k.hi:
            raise ApproxError(f"knob {k.name}={v} at {site} outside [{k.lo}, {k.hi}]")
        out[k.name] = v
    return out


def _rewrite_round(graph: Graph, passes: Sequence[PassDescriptor], knobs: Mapping,
                   sites: list[SiteRecord]) -> Graph:
    b = GraphBuilder()
    new_id: dict[int, int] = {}
    for nid in topo_order(graph):
        node = graph.nodes[nid]
        args = [new_id[i] for i in node.inputs]
        chosen = None
        if node.op in opdefs.COMPOSITES and not is_public(node):
            chosen = next((p for p in passes if p.matches(node)), None)
            if chosen is None:
                raise ApproxError(f"no approximation for {node.op} at {node.site_id}")
        if chosen is None:
            nn = b.add(node.op, args, node.attrs, site_id=node.site_id, owner=node.owner,
                       meta=None if node.op not in ("input", "const") else node.meta)
            if node.op == "input":
                b._inputs.append((node.attrs["name"], nn))
            new_id[nid] = nn
            continue
        values = resolve_knobs(chosen, node.site_id, knobs)
        em = Emitter(b, node, node.owner)
        out = chosen.replacement(em, node, args, values)
        rank = opdefs.OPS[node.op].rank
        for e in em.emitted:
            op = b.node(e).op
            if op in opdefs.COMPOSITES and opdefs.OPS[op].rank >= rank:
                raise ApproxError(f"internal error: pass {chosen.name!r} re-emits {op} "
                                  f"(rank {opdefs.OPS[op].rank} >= {rank}) at {node.site_id}")
        if b.meta(out).shape != node.meta.shape:
            raise ApproxError(f"internal error: pass {chosen.name!r} changed shape at {node.site_id}: "
                              f"{node.meta.shape} -> {b.meta(out).shape}")
        if out in em.emitted:
            b._nodes[out] = replace(b._nodes[out], site_id=node.site_id)
        sites.append(SiteRecord(node.site_id, chosen.name, tuple(sorted(values.items()))))
        new_id[nid] = out
    for o in graph.outputs:
        b.output(new_id[o])
    return b.build()


def rewrite_fixpoint(graph: Graph, passes: Sequence[PassDescriptor],
                     knobs: Mapping | None = None) -> RewriteResult:
    """Apply passes round by round until only supported operators remain.

    Each replacement may only emit composite operators of strictly lower
    rank than the one it replaces, so the multiset of ranks decreases and
    the loop terminates; the round limit is a guard against buggy passes.
    """
    knobs = dict(knobs or {})
    sites: list[SiteRecord] = []
    limit = max(1, len(graph) * max(1, len(passes)))
    rounds = 0
    if any(n.owner is None for n in graph.nodes.values()):
        raise ApproxError("graph must be owner-annotated before approximation")
    while True:
        pending = unsupported_nodes(graph)
        if not pending:
            return RewriteResult(graph, sites)
        rounds += 1
        if rounds > limit:
            raise ApproxError("internal error: rewrite did not reach a fixpoint")
        graph = propagate_ownership(_rewrite_round(graph, passes, knobs, sites))
