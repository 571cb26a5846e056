"""Static communication model for party programs.

The formulas count exactly the messages the runtime protocols send:

* share_input: the owner sends the mask r, n*N/8 bytes, one round.
* mul_mpc: each party opens x-a and y-b over the E expanded products,
  2*E*N/8 bytes per party, one round.
* ltz_mpc over m = w-1 carry positions: one round of m ANDs for the
  generate bits, then Kogge-Stone levels d = 1, 2, 4, ... < m with 2(m-d)
  ANDs each, then one round opening c = s xor r for bit-to-arithmetic
  conversion.  Every AND opens two bits per party.  Bytes are bit counts
  packed per round, so n*w*log2(w) up to rounding; rounds are
  ceil(log2(w-1)) + 2.
* max_kernel: per tree level, one ltz and one mul_mpc on the pair count.
* reveal: the other party sends its share, n*N/8 bytes, one round.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .program import Instr, PartyProgram

CATEGORIES = ("linear", "mul", "comparison", "max", "other")


def _ceil8(bits: int) -> int:
    return -(-bits // 8)


def ltz_levels(w: int) -> list[int]:
    """AND gates per element in each round of the comparison circuit."""
    m = w - 1
    if m <= 0:
        return []
    levels = [m]
    d = 1
    while d < m:
        levels.append(2 * (m - d))
        d *= 2
    return levels


@dataclass
class OpCost:
    bytes: list[int] = field(default_factory=lambda: [0, 0])
    rounds: int = 0
    triples: list[tuple[str, int]] = field(default_factory=list)
    ltz_calls: int = 0
    comparisons: int = 0
    and_gates: int = 0
    mul_elems: int = 0

    def __iadd__(self, other: OpCost) -> OpCost:
        self.bytes = [a + b for a, b in zip(self.bytes, other.bytes)]
        self.rounds += other.rounds
        self.triples += other.triples
        self.ltz_calls += other.ltz_calls
        self.comparisons += other.comparisons
        self.and_gates += other.and_gates
        self.mul_elems += other.mul_elems
        return self


def mul_cost(expanded: int, ring_width: int) -> OpCost:
    b = 2 * expanded * ring_width // 8
    return OpCost([b, b], 1, [("arith", expanded)], mul_elems=expanded)


def ltz_cost(n: int, w: int) -> OpCost:
    levels = ltz_levels(w)
    b = sum(_ceil8(2 * a * n) for a in levels) + _ceil8(n)
    triples = [("bool", a * n) for a in levels] + [("dabit", n)]
    return OpCost([b, b], len(levels) + 1, triples, ltz_calls=1, comparisons=n,
                  and_gates=sum(levels) * n)


def max_levels(length: int) -> list[int]:
    """Pairs compared per tree level when reducing ``length`` elements."""
    out = []
    while length > 1:
        out.append(length // 2)
        length -= length // 2
    return out


def max_cost(groups: int, length: int, w: int, ring_width: int) -> OpCost:
    total = OpCost()
    for pairs in max_levels(length):
        total += ltz_cost(groups * pairs, w)
        total += mul_cost(groups * pairs, ring_width)
    return total


def instr_cost(ins: Instr, ring_width: int) -> OpCost:
    a = ins.attrs
    nb = ring_width // 8
    if ins.op == "share_input":
        c = OpCost(rounds=1)
        c.bytes[a["owner"]] = ins.size * nb
        return c
    if ins.op == "reveal":
        c = OpCost(rounds=1)
        c.bytes[1 - a["to"]] = ins.size * nb
        return c
    if ins.op == "mul_mpc":
        return mul_cost(a["expanded"], ring_width)
    if ins.op == "ltz_mpc":
        return ltz_cost(ins.size, a["w"])
    if ins.op == "max_kernel":
        return max_cost(a["groups"], a["length"], a["w"], ring_width)
    return OpCost(rounds=0)


def category(ins: Instr) -> str | None:
    if ins.op == "mul_mpc":
        return "linear" if ins.attrs.get("kind", "mul") in ("matmul", "conv2d") else "mul"
    if ins.op == "ltz_mpc":
        return "comparison"
    if ins.op == "max_kernel":
        return "max"
    if ins.op in ("share_input", "reveal"):
        return "io"
    if ins.comm:
        return "other"
    return None


@dataclass
class CostReport:
    bytes: list[int]
    rounds: int
    breakdown: dict[str, dict[str, int]]
    io: dict[str, int]
    counters: dict[str, int]
    triples: list[tuple[str, int]]

    @property
    def bytes0(self) -> int:
        return self.bytes[0]

    @property
    def bytes1(self) -> int:
        return self.bytes[1]

    def table(self) -> dict[str, dict[str, float]]:
        """Per-category share of compute bytes and rounds in percent (I/O excluded)."""
        tot_b = sum(v["bytes"] for v in self.breakdown.values())
        tot_r = sum(v["rounds"] for v in self.breakdown.values())
        out = {}
        for cat, v in self.breakdown.items():
            if v["bytes"] == 0 and v["rounds"] == 0:
                continue
            out[cat] = {"bytes": v["bytes"], "rounds": v["rounds"],
                        "bytes_pct": 100.0 * v["bytes"] / tot_b if tot_b else 0.0,
                        "rounds_pct": 100.0 * v["rounds"] / tot_r if tot_r else 0.0}
        return out

    def to_json(self) -> dict:
        return {"bytes0": self.bytes[0], "bytes1": self.bytes[1], "rounds": self.rounds,
                "breakdown": self.breakdown, "io": self.io, "counters": self.counters,
                "triples": [list(t) for t in self.triples], "table": self.table(),
                "comparison_rounds": {"implemented": "ceil(log2(w-1)) + 2 per ltz (parallel prefix)",
                                      "reference_bound": "O(N log N)"}}


class CostAccumulator:
    """Running totals keyed by category; shared by the static model and the runtime."""

    def __init__(self):
        self.bytes = [0, 0]
        self.rounds = 0
        self.breakdown = {c: {"bytes": 0, "rounds": 0} for c in CATEGORIES}
        self.io = {"bytes": 0, "rounds": 0}
        self.counters = {"ltz_calls": 0, "comparisons": 0, "and_gates": 0, "mul_mpc_elems": 0,
                         "mul_mpc_calls": 0, "max_kernels": 0}
        self.triples: list[tuple[str, int]] = []

    def add(self, ins: Instr, c: OpCost) -> None:
        cat = category(ins)
        if cat is None:
            return
        self.bytes = [a + b for a, b in zip(self.bytes, c.bytes)]
        self.rounds += c.rounds
        slot = self.io if cat == "io" else self.breakdown[cat]
        slot["bytes"] += sum(c.bytes)
        slot["rounds"] += c.rounds
        self.counters["ltz_calls"] += c.ltz_calls
        self.counters["comparisons"] += c.comparisons
        self.counters["and_gates"] += c.and_gates
        self.counters["mul_mpc_elems"] += c.mul_elems
        self.counters["mul_mpc_calls"] += ins.op == "mul_mpc"
        self.counters["max_kernels"] += ins.op == "max_kernel"
        self.triples += c.triples

    def report(self) -> CostReport:
        return CostReport(list(self.bytes), self.rounds, {k: dict(v) for k, v in self.breakdown.items()},
                          dict(self.io), dict(self.counters), list(self.triples))


def static_cost(programs: Iterable[PartyProgram] | PartyProgram) -> CostReport:
    """Bytes per party, rounds and triple plan; uses party 0's program for the comm sequence."""
    if isinstance(programs, PartyProgram):
        prog = programs
    else:
        prog = list(programs)[0]
    acc = CostAccumulator()
    for ins in prog.instrs:
        if ins.comm:
            acc.add(ins, instr_cost(ins, prog.ring_width))
    return acc.report()


def triple_plan(program: PartyProgram) -> list[tuple[str, int]]:
    return static_cost(program).triples
