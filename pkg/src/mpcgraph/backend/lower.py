"""Typed translation of an owner-annotated, post-approximation graph into party programs.

Public values stay plaintext with scale 1.  Singly-owned inputs are
secret-shared at the default scale.  Every other rule tracks the
fixed-point scale of each share and inserts encode/trunc so that additions
see equal scales and products are brought back down by the smaller scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import opdefs
from ..frontend import default_reveal_to
from ..ir import FLOAT64, INT64, BackType, Graph, Node, is_public, topo_order
from .program import Instr, PartyProgram


class LoweringError(Exception):
    def __init__(self, message: str, node: Node | None = None):
        if node is not None:
            message = f"{message} (node {node.id}, site {node.site_id})"
        super().__init__(message)
        self.node = node


@dataclass
class LowerConfig:
    ring_width: int = 64
    scale: int = 1 << 16
    reveal_to: int | None = None
    default_window: int | None = None  # None means the full ring width
    windows: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ValueError(f"scale must be a power of two, got {self.scale}")
        if self.ring_width % 8 or not 8 <= self.ring_width <= 64:
            raise ValueError(f"ring width must be a multiple of 8 in [8, 64], got {self.ring_width}")

    def window(self, site: str) -> int:
        w = self.windows.get(site, self.default_window or self.ring_width)
        return max(1, min(int(w), self.ring_width))


@dataclass
class _Val:
    reg: int
    type: BackType
    shape: tuple[int, ...]
    ring: bool  # True for ring elements (shares or encoded publics); False for plaintext floats

    @property
    def secret(self) -> bool:
        return self.type.secret

    @property
    def scale(self) -> int:
        return self.type.scale


def _log2(s: int) -> int:
    return int(s).bit_length() - 1


class _Lowerer:
    def __init__(self, graph: Graph, cfg: LowerConfig):
        self.g = graph
        self.cfg = cfg
        self.N = cfg.ring_width
        self.sd = cfg.scale
        self.p: tuple[list[Instr], list[Instr]] = ([], [])
        self.next_reg = 0
        self.env: dict[int, _Val] = {}
        self.outputs: list[int] = []
        self.node: Node | None = None

    # -- emission
    def emit(self, op, args, attrs, type_, shape, op1=None, args1=None, attrs1=None, ring=True) -> _Val:
        reg = self.next_reg
        self.next_reg += 1
        n = self.node
        common = dict(type=type_, shape=tuple(shape), node=n.id if n else -1, site=n.site_id if n else "")
        self.p[0].append(Instr(op, reg, tuple(a.reg for a in args), dict(attrs), **common))
        a1 = args if args1 is None else args1
        self.p[1].append(Instr(op1 or op, reg, tuple(a.reg for a in a1),
                               dict(attrs if attrs1 is None else attrs1), **common))
        return _Val(reg, type_, tuple(shape), ring)

    def secret_type(self, scale: int) -> BackType:
        if _log2(scale) > self.N - 8:
            raise LoweringError(f"scale overflow: 2^{_log2(scale)} exceeds the ring headroom "
                                f"2^{self.N - 8}", self.node)
        return BackType("secret", INT64, scale, self.N)

    def rescale(self, v: _Val, s_new: int) -> _Val:
        if v.scale == s_new:
            return v  # encode to the same scale is a no-op
        return self.emit("encode", [v], {"s_old": v.scale, "s_new": s_new}, self.secret_type(s_new), v.shape)

    def encode_pub(self, v: _Val, scale: int) -> _Val:
        return self.emit("encode_pub", [v], {"s": scale}, BackType("pub", INT64, scale, self.N), v.shape)

    def trunc(self, v: _Val, s: int, result_scale: int) -> _Val:
        return self.emit("trunc", [v], {"s": s}, self.secret_type(result_scale), v.shape)

    def check_product(self, s1: int, s2: int) -> None:
        if _log2(s1) + _log2(s2) > self.N - 8:
            raise LoweringError(f"scale overflow: product scale 2^{_log2(s1) + _log2(s2)} exceeds "
                                f"the ring headroom 2^{self.N - 8}", self.node)

    # -- rules
    def run(self) -> tuple[PartyProgram, PartyProgram]:
        reveal_to = self.cfg.reveal_to
        if reveal_to is None:
            reveal_to = default_reveal_to(self.g)
        self.reveal_to = reveal_to
        for nid in topo_order(self.g):
            node = self.g.nodes[nid]
            self.node = node
            if node.owner is None:
                raise LoweringError("graph is not owner-annotated", node)
            self.env[nid] = self.lower_node(node)
        self.node = None
        return tuple(PartyProgram(i, self.p[i], list(self.outputs), self.N, self.sd, reveal_to)
                     for i in (0, 1))

    def lower_node(self, node: Node) -> _Val:
        shape = node.meta.shape
        args = [self.env[i] for i in node.inputs]
        if node.op == "input":
            if is_public(node):  # No-Enc
                return self.emit("pub_input", [], {"name": node.attrs["name"]},
                                 BackType("pub", node.meta.dtype, 1, self.N), shape, ring=False)
            if len(node.owner) != 1:
                raise LoweringError(f"input {node.attrs['name']!r} has no owner", node)
            owner = next(iter(node.owner))  # Enc
            return self.emit("share_input", [], {"name": node.attrs["name"], "owner": owner, "s": self.sd},
                             self.secret_type(self.sd), shape)
        if node.op == "const":
            return self.emit("pub_const", [], {"value": node.attrs["value"]},
                             BackType("pub", node.meta.dtype, 1, self.N), shape, ring=False)
        if node.op == "reveal":
            return self.reveal(node, args[0])
        if is_public(node) or not any(a.secret for a in args):
            return self.public_eval(node, args)
        cat = node.category
        if cat == opdefs.ADD_LIKE:
            if node.op in ("add", "sub"):
                return self.add_like(node, args)
            return self.reduce_like(node, args[0])
        if cat == opdefs.MUL_LIKE:
            return self.mul_like(node, args)
        if cat == opdefs.LTZ:
            v = args[0]
            return self.emit("ltz_mpc", [v], {"w": self.cfg.window(node.site_id), "s_in": v.scale},
                             self.secret_type(1), shape)
        if cat == opdefs.MAX:
            return self.max_kernel(node, args[0])
        if cat == opdefs.SHAPE_ONLY:
            return self.shape_op(node, args)
        raise LoweringError(f"unsupported operator {node.op} after approximation", node)

    def public_eval(self, node: Node, args: list[_Val]) -> _Val:
        attrs = {"op": node.op, "attrs": dict(node.attrs)}
        if node.category == opdefs.VALUE_FREE:
            # only the input shape matters, so secret operands are never read
            attrs["in_shapes"] = [list(a.shape) for a in args]
            args = []
        elif any(a.ring for a in args):
            raise LoweringError("public operator on ring values", node)
        return self.emit("pub_eval", args, attrs, BackType("pub", node.meta.dtype, 1, self.N),
                         node.meta.shape, ring=False)

    def reveal(self, node: Node, v: _Val) -> _Val:
        if not v.secret:
            out = self.emit("pub_eval", [v], {"op": "reveal", "attrs": {}},
                            BackType("pub", FLOAT64, 1, self.N), v.shape, ring=False)
        else:
            out = self.emit("reveal", [v], {"to": self.reveal_to, "s": v.scale},
                            BackType("pub", FLOAT64, 1, self.N), v.shape, ring=False)
        self.outputs.append(out.reg)
        return out

    def pub_scale(self, v: _Val, s: int) -> int:
        """Target scale for a public operand: its float values never go below s_d."""
        return max(s, self.sd) if v.type.dtype.is_float else s

    def add_like(self, node: Node, args: list[_Val]) -> _Val:
        a, b = args
        sub = node.op == "sub"
        shape = node.meta.shape
        if a.secret and b.secret:  # Sec-Sec Add
            s = max(a.scale, b.scale)
            a, b = self.rescale(a, s), self.rescale(b, s)
            return self.emit(node.op, [a, b], {}, self.secret_type(s), shape)
        sec, pub = (a, b) if a.secret else (b, a)
        s = self.pub_scale(pub, sec.scale)  # Sec-PubInt / Sec-PubFloat Add
        sec = self.rescale(sec, s)
        enc = self.encode_pub(pub, s)
        t = self.secret_type(s)
        if not sub:
            return self.emit("add_pub", [sec, enc], {}, t, shape, op1="mov", args1=[sec])
        if a.secret:
            return self.emit("sub_pub", [sec, enc], {}, t, shape, op1="mov", args1=[sec])
        return self.emit("pub_sub", [enc, sec], {}, t, shape, op1="neg", args1=[sec])

    def reduce_like(self, node: Node, v: _Val) -> _Val:
        attrs = {"op": "avgpool" if node.op == "avgpool" else "sum", "attrs": dict(node.attrs)}
        total = self.emit("sum_local", [v], attrs, v.type, node.meta.shape)
        if node.op == "sum":
            return total
        count = int(np.prod(v.shape)) // int(np.prod(node.meta.shape))
        if node.op == "avgpool":
            count = int(node.attrs["kernel"]) ** 2
        # public divisor as Sec-PubFloat Mul
        inv = self.emit("pub_const", [], {"value": [1.0 / count]}, BackType("pub", FLOAT64, 1, self.N),
                        (), ring=False)
        return self.mul_public(total, inv, "mul", {}, node.meta.shape, pub_first=False)

    def mul_like(self, node: Node, args: list[_Val]) -> _Val:
        a, b = args
        kind = node.op
        shape = node.meta.shape
        if a.secret and b.secret:  # Sec-Sec Mul
            self.check_product(a.scale, b.scale)
            s_min, s_max = min(a.scale, b.scale), max(a.scale, b.scale)
            k = 1
            if kind == "matmul":
                k = a.shape[-1]
            elif kind == "conv2d":
                k = int(np.prod(b.shape[1:]))
            expanded = int(np.prod(shape)) * k
            prod = self.emit("mul_mpc", [a, b], {"kind": kind, "attrs": dict(node.attrs),
                                                 "expanded": expanded},
                             self.secret_type(a.scale * b.scale), shape)
            return self.trunc(prod, s_min, s_max)
        pub_first = not a.secret
        sec, pub = (b, a) if pub_first else (a, b)
        return self.mul_public(sec, pub, kind, dict(node.attrs), shape, pub_first)

    def mul_public(self, sec: _Val, pub: _Val, kind: str, attrs: dict, shape, pub_first: bool) -> _Val:
        # Sec-PubFloat Mul encodes at s_d; Sec-PubInt Mul keeps the integer at scale 1
        s_pub = self.sd if pub.type.dtype.is_float else 1
        self.check_product(sec.scale, s_pub)
        enc = self.encode_pub(pub, s_pub)
        ops = [enc, sec] if pub_first else [sec, enc]
        prod = self.emit("mul_pub", ops, {"kind": kind, "attrs": attrs},
                         self.secret_type(sec.scale * s_pub), shape)
        return self.trunc(prod, min(sec.scale, s_pub), max(sec.scale, s_pub))

    def max_kernel(self, node: Node, v: _Val) -> _Val:
        length = int(np.prod(v.shape)) // int(np.prod(node.meta.shape))
        if node.op == "maxpool":
            length = int(node.attrs["kernel"]) ** 2
        groups = int(np.prod(node.meta.shape))
        attrs = {"op": node.op, "attrs": dict(node.attrs), "w": self.cfg.window(node.site_id),
                 "groups": groups, "length": length, "s_in": v.scale}
        return self.emit("max_kernel", [v], attrs, v.type, node.meta.shape)

    def shape_op(self, node: Node, args: list[_Val]) -> _Val:
        s = max(a.scale for a in args if a.secret)
        if any(not a.secret and a.type.dtype.is_float for a in args):
            s = max(s, self.sd)
        ops = []
        for a in args:
            if a.secret:
                ops.append(self.rescale(a, s))
            else:
                enc = self.encode_pub(a, s)
                ops.append(self.emit("share_pub", [enc], {}, self.secret_type(s), a.shape))
        return self.emit("shape", ops, {"op": node.op, "attrs": dict(node.attrs)}, self.secret_type(s),
                         node.meta.shape)


def lower_pair(graph: Graph, config: LowerConfig | None = None) -> tuple[PartyProgram, PartyProgram]:
    """Lower for both parties at once; the two programs share register numbering."""
    return _Lowerer(graph, config or LowerConfig()).run()


def lower(graph: Graph, party: int, config: LowerConfig | None = None) -> PartyProgram:
    if party not in (0, 1):
        raise ValueError(f"party must be 0 or 1, got {party}")
    return lower_pair(graph, config)[party]
