"""Ownership annotation and forward propagation over the IR."""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from . import opdefs
from .ir import PUBLIC, Graph, GraphBuilder, Node, topo_order


class FrontendError(Exception):
    pass


@dataclass
class Annotation:
    """Input name (or glob pattern) to owning parties.

    ``{"secrets": {"x": [0], "w*": [1]}, "public": ["mask"]}``.  An entry
    listing every party is the same as naming the input public.
    """

    owners: dict[str, frozenset] = field(default_factory=dict)

    @classmethod
    def from_json(cls, doc: Mapping) -> Annotation:
        owners = {k: frozenset(int(p) for p in v) for k, v in doc.get("secrets", {}).items()}
        for name in doc.get("public", []):
            owners[name] = PUBLIC
        for k, v in owners.items():
            if not v <= PUBLIC:
                raise FrontendError(f"annotation for {k!r} names unknown parties {sorted(v - PUBLIC)}")
        return cls(owners)

    @classmethod
    def load(cls, path: str | Path) -> Annotation:
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_json(self) -> dict:
        secrets = {k: sorted(v) for k, v in self.owners.items() if v != PUBLIC}
        public = sorted(k for k, v in self.owners.items() if v == PUBLIC)
        return {"secrets": secrets, "public": public}

    def lookup(self, name: str) -> frozenset | None:
        if name in self.owners:
            return self.owners[name]
        for pattern, owner in self.owners.items():
            if fnmatch.fnmatchcase(name, pattern):
                return owner
        return None


def _value_relevant(node: Node) -> bool:
    return node.category != opdefs.VALUE_FREE


def propagate_ownership(graph: Graph, ann: Annotation | Mapping | None = None) -> Graph:
    """Attach an owner set to every node.

    Inputs take their annotation, constants and value-free operators are
    public, everything else is the intersection of its inputs' owners.
    With ``ann=None`` the owners already present on input nodes are reused,
    which is how rewritten graphs are re-annotated.
    """
    if ann is not None and not isinstance(ann, Annotation):
        ann = Annotation.from_json(ann)
    owners: dict[int, frozenset] = {}
    for nid in topo_order(graph):
        node = graph.nodes[nid]
        if node.op == "input":
            name = node.attrs["name"]
            own = ann.lookup(name) if ann is not None else node.owner
            if own is None:
                raise FrontendError(f"missing ownership annotation for input {name!r}")
            if not own:
                raise FrontendError(f"input {name!r} must be owned by at least one party")
        elif node.op == "const" or not _value_relevant(node):
            own = PUBLIC
        else:
            own = PUBLIC
            for i in node.inputs:
                own = own & owners[i]
        owners[nid] = frozenset(own)
    return graph.map_nodes(lambda n: replace(n, owner=owners[n.id]))


def assign_site_ids(graph: Graph) -> Graph:
    """Give every node the stable address ``<op>/<ordinal in topological order>``."""
    order = topo_order(graph)
    pos = {nid: k for k, nid in enumerate(order)}
    return graph.map_nodes(lambda n: replace(n, site_id=f"{n.op}/{pos[n.id]}"))


def attach_reveals(graph: Graph) -> Graph:
    """Wrap each output that is not already a reveal in a reveal node."""
    if all(graph.nodes[o].op == "reveal" for o in graph.outputs):
        return graph
    b = GraphBuilder(start_id=max(graph.nodes) + 1)
    b._nodes = dict(graph.nodes)
    b._inputs = list(graph.inputs)
    for o in graph.outputs:
        node = graph.nodes[o]
        if node.op == "reveal":
            b.output(o)
        else:
            rid = b.add("reveal", (o,), site_id=f"reveal/out{len(b._outputs)}", owner=node.owner)
            b.output(rid)
    return b.build()


def default_reveal_to(graph: Graph) -> int:
    """The party owning the first singly-owned input; party 0 when every input is public."""
    for _, nid in graph.inputs:
        owner = graph.nodes[nid].owner
        if owner is not None and len(owner) == 1:
            return next(iter(owner))
    return 0


def is_secret(node: Node) -> bool:
    return node.owner is None or not node.owner >= PUBLIC


def run_frontend(graph: Graph, ann: Annotation | Mapping) -> Graph:
    return propagate_ownership(assign_site_ids(attach_reveals(graph)), ann)
