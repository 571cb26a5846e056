"""Per-party instruction programs produced by lowering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..ir import BackType, _jsonable

# instructions that exchange messages; both parties hit them in the same order
COMM_OPS = frozenset({"share_input", "mul_mpc", "ltz_mpc", "max_kernel", "reveal"})

# every opcode a party program may contain
OPCODES = COMM_OPS | frozenset({
    "pub_input", "pub_const", "pub_eval",  # plaintext values known to both parties
    "encode_pub",  # public float/int -> ring element at a scale
    "encode",  # rescale a share (exact multiply when growing, trunc when shrinking)
    "add", "sub",  # share (+/-) share
    "add_pub", "sub_pub", "pub_sub",  # share (+/-) public ring value, party 0 only
    "mov", "neg",  # the other party's half of the public-operand rules
    "share_pub",  # public ring value as a share: party 0 holds it, party 1 holds zeros
    "mul_pub",  # share times public ring value (mul, matmul or conv2d)
    "mul",  # local product; never valid on two secrets (typecheck catches it)
    "trunc",  # local arithmetic shift by log2(s)
    "sum_local",  # sum / avgpool window sum on shares
    "shape",  # shape-only operator applied to shares
})


@dataclass(frozen=True)
class Instr:
    op: str
    out: int
    args: tuple[int, ...] = ()
    attrs: Mapping[str, Any] = field(default_factory=dict)
    type: BackType | None = None
    shape: tuple[int, ...] = ()
    node: int = -1
    site: str = ""

    @property
    def comm(self) -> bool:
        return self.op in COMM_OPS

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def to_json(self) -> dict:
        d = {"op": self.op, "out": self.out, "args": list(self.args), "attrs": _jsonable(dict(self.attrs)),
             "shape": list(self.shape), "node": self.node, "site": self.site}
        if self.type is not None:
            d["type"] = self.type.to_json()
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> Instr:
        bt = BackType.from_json(d["type"]) if "type" in d else None
        return cls(d["op"], int(d["out"]), tuple(d.get("args", ())), dict(d.get("attrs", {})), bt,
                   tuple(d.get("shape", ())), int(d.get("node", -1)), d.get("site", ""))


@dataclass
class PartyProgram:
    party: int
    instrs: list[Instr]
    outputs: list[int]  # registers revealed to this party (None-valued at the other)
    ring_width: int = 64
    scale: int = 1 << 16
    reveal_to: int = 0

    def comm_points(self) -> list[tuple[int, Instr]]:
        return [(k, ins) for k, ins in enumerate(self.instrs) if ins.comm]

    def to_json(self) -> dict:
        return {"party": self.party, "ring_width": self.ring_width, "scale": self.scale,
                "reveal_to": self.reveal_to, "outputs": list(self.outputs),
                "instrs": [i.to_json() for i in self.instrs]}

    @classmethod
    def from_json(cls, d: Mapping) -> PartyProgram:
        return cls(int(d["party"]), [Instr.from_json(i) for i in d["instrs"]], list(d["outputs"]),
                   int(d.get("ring_width", 64)), int(d.get("scale", 1 << 16)), int(d.get("reveal_to", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)
