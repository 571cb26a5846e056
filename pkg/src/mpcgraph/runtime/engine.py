"""Lockstep execution of a pair of party programs with exact communication accounting."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import opdefs
from ..backend.cost import CostAccumulator, CostReport, OpCost, static_cost
from ..backend.program import Instr, PartyProgram
from ..ir import PUBLIC, Graph
from . import protocols as P
from .dealer import Dealer
from .ring import Ring


@dataclass
class Seeds:
    dealer: int
    party0: int
    party1: int

    @classmethod
    def from_seed(cls, seed: int) -> Seeds:
        ss = np.random.SeedSequence(seed).spawn(3)
        return cls(*(int(s.generate_state(1)[0]) for s in ss))


@dataclass
class Trace:
    """Reconstructed values per instruction and per comparison site (debug mode only)."""

    values: dict[int, np.ndarray] = field(default_factory=dict)  # node id -> decoded value
    # site -> [(reconstructed signed ring input, reconstructed output bit)]
    ltz: dict[str, list[tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)

    def comparison_errors(self) -> int:
        return int(sum(np.count_nonzero((x < 0).astype(np.int64) != o) for recs in self.ltz.values()
                       for x, o in recs))


@dataclass
class ExecutionResult:
    outputs: list[np.ndarray]
    cost: CostReport
    transcript: list[dict]
    trace: Trace | None = None

    def transcript_digest(self) -> str:
        h = hashlib.sha256()
        for t in self.transcript:
            h.update(repr(sorted(t.items())).encode())
        return h.hexdigest()


def split_inputs(graph: Graph, inputs: Mapping[str, np.ndarray]) -> tuple[dict, dict]:
    """Give each party the inputs it owns; public inputs go to both."""
    per = ({}, {})
    for name, nid in graph.inputs:
        owner = graph.nodes[nid].owner or frozenset()
        if name not in inputs:
            raise P.ProtocolError(f"missing input {name!r}")
        for p in (0, 1):
            if p in owner or owner >= PUBLIC:
                per[p][name] = np.asarray(inputs[name], dtype=np.float64)
    return per


class _Party:
    def __init__(self, prog: PartyProgram, ctx: P.Context, inputs: Mapping, debug: bool):
        self.prog = prog
        self.ctx = ctx
        self.inputs = inputs
        self.regs: dict[int, object] = {}
        self.debug = debug
        self.ltz_records: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self.stats: dict[int, P.Stats] = {}

    def run(self):
        ring = self.ctx.ring
        for k, ins in enumerate(self.prog.instrs):
            if ins.comm:
                before = P.Stats(**vars(self.ctx.stats))
                gen = self.comm(k, ins)
                val = yield from _tag(gen, k, ins)
                after = self.ctx.stats
                self.stats[k] = P.Stats(after.ltz_calls - before.ltz_calls, after.comparisons - before.comparisons,
                                        after.and_gates - before.and_gates, after.mul_elems - before.mul_elems)
            else:
                val = self.local(ins, ring)
            self.regs[ins.out] = val

    # -- local instructions
    def local(self, ins: Instr, ring: Ring):
        a = ins.attrs
        args = [self.regs[r] for r in ins.args]
        party = self.ctx.party
        op = ins.op
        if op == "pub_input":
            return np.asarray(self.inputs[a["name"]], dtype=np.float64).reshape(ins.shape)
        if op == "pub_const":
            return np.asarray(a["value"], dtype=np.float64).reshape(ins.shape)
        if op == "pub_eval":
            if "in_shapes" in a:
                args = [np.zeros(s) for s in a["in_shapes"]]
            return opdefs.evaluate(a["op"], args, a["attrs"])
        if op == "encode_pub":
            return np.broadcast_to(ring.encode(args[0], a["s"]), ins.shape) if args[0].shape != ins.shape \
                else ring.encode(args[0], a["s"])
        if op == "encode":
            s_old, s_new = a["s_old"], a["s_new"]
            if s_new >= s_old:
                return ring.mul(args[0], np.uint64(s_new // s_old))
            return ring.shift(args[0], (s_old // s_new).bit_length() - 1)
        if op == "add":
            return ring.add(*args)
        if op == "sub":
            return ring.sub(*args)
        if op == "add_pub":
            return ring.add(*args)
        if op == "sub_pub":
            return ring.sub(*args)
        if op == "pub_sub":
            return ring.sub(*args)
        if op == "mov":
            return np.asarray(args[0], np.uint64).copy()
        if op == "neg":
            return ring.neg(args[0])
        if op == "share_pub":
            v = np.asarray(args[0], np.uint64)
            return v.copy() if party == 0 else np.zeros_like(v)
        if op in ("mul_pub", "mul"):
            out = P.mul_local(ring, a["kind"], args[0], args[1], a["attrs"])
            return np.broadcast_to(out, ins.shape).copy() if out.shape != ins.shape else out
        if op == "trunc":
            return ring.shift(args[0], int(a["s"]).bit_length() - 1)
        if op == "sum_local":
            x = args[0]
            if a["op"] == "avgpool":
                return opdefs.pool_windows(x, a["attrs"]["kernel"]).sum(axis=-1) & ring.mask
            attrs = a["attrs"]
            axis = attrs.get("axis")
            axis = tuple(axis) if isinstance(axis, list) else axis
            return np.sum(x, axis=axis, keepdims=attrs.get("keepdims", False), dtype=np.uint64) & ring.mask
        if op == "shape":
            out = opdefs.OPS[a["op"]].kernel(args, a["attrs"])
            return np.ascontiguousarray(out, dtype=np.uint64)
        raise P.ProtocolError(f"unknown opcode {op!r}")

    # -- communicating instructions
    def comm(self, k: int, ins: Instr):
        ctx, ring = self.ctx, self.ctx.ring
        a = ins.attrs
        args = [self.regs[r] for r in ins.args]
        if ins.op == "share_input":
            if ctx.party == a["owner"]:
                x = ring.encode(self.inputs[a["name"]], a["s"]).reshape(ins.shape)
                r = ring.random(ctx.rng, x.shape)
                yield P.Exchange(ring.to_bytes(r))
                return ring.sub(x, r)
            msg = yield P.Exchange(None)
            return ring.from_bytes(P._expect(msg, "share_input"), ins.shape)
        if ins.op == "reveal":
            if ctx.party == a["to"]:
                msg = yield P.Exchange(None)
                peer = ring.from_bytes(P._expect(msg, "reveal"), ins.shape)
                return ring.decode(ring.add(args[0], peer), a["s"])
            yield P.Exchange(ring.to_bytes(args[0]))
            return None
        if ins.op == "mul_mpc":
            return (yield from P.mul_like_mpc(ctx, a["kind"], args[0], args[1], a["attrs"], ins.shape))
        if self.debug:
            records = self.ltz_records.setdefault(k, [])
            ctx.probe = lambda x, o: records.append((x.copy(), o.copy()))
        else:
            ctx.probe = None
        if ins.op == "ltz_mpc":
            return (yield from P.ltz(ctx, args[0], a["w"]))
        if ins.op == "max_kernel":
            rows = P.reduce_groups(np.asarray(args[0], np.uint64), a["op"], a["attrs"])
            out = yield from P.max_tree(ctx, rows, a["w"])
            return out.reshape(ins.shape)
        raise P.ProtocolError(f"unknown communication opcode {ins.op!r}")


def _tag(gen, k: int, ins: Instr):
    """Stamp every exchange of a protocol run with its instruction index."""
    try:
        ex = next(gen)
    except StopIteration as stop:
        return stop.value
    while True:
        ex.instr = k
        ex.key = (ins.op, ins.node)
        reply = yield ex
        try:
            ex = gen.send(reply)
        except StopIteration as stop:
            return stop.value


def execute(programs: tuple[PartyProgram, PartyProgram], inputs: tuple[Mapping, Mapping],
            seeds: Seeds | int = 0, *, debug: bool = False) -> ExecutionResult:
    """Run both programs to completion.

    ``inputs[p]`` holds the plaintext inputs party p owns (public inputs in both).
    The dealer is provisioned with exactly the statically predicted triples.
    """
    if isinstance(seeds, int):
        seeds = Seeds.from_seed(seeds)
    p0, p1 = programs
    ring = Ring(p0.ring_width)
    plan = static_cost(p0).triples
    dealer = Dealer(ring, plan, seeds.dealer)
    ctxs = [P.Context(0, ring, dealer, np.random.default_rng(seeds.party0)),
            P.Context(1, ring, dealer, np.random.default_rng(seeds.party1))]
    parties = [_Party(p0, ctxs[0], inputs[0], debug), _Party(p1, ctxs[1], inputs[1], debug)]
    gens = [parties[0].run(), parties[1].run()]
    cur: list = [None, None]
    done = [False, False]

    def step(i, reply):
        try:
            cur[i] = gens[i].send(reply)
        except StopIteration:
            done[i] = True
            cur[i] = None

    step(0, None)
    step(1, None)
    transcript: list[dict] = []
    per_instr: dict[int, list] = {}
    rnd = 0
    while not all(done):
        if any(done):
            i = 0 if not done[0] else 1
            ex = cur[i]
            raise P.ProtocolError(f"desynchronized programs at instruction {ex.instr}: party {i} waits in "
                                  f"{ex.key[0]} but party {1 - i} finished")
        e0, e1 = cur
        if (e0.instr, e0.key) != (e1.instr, e1.key):
            raise P.ProtocolError(f"desynchronized programs at instruction {min(e0.instr, e1.instr)}: "
                                  f"party 0 at {e0.instr} {e0.key[0]}, party 1 at {e1.instr} {e1.key[0]}")
        slot = per_instr.setdefault(e0.instr, [0, 0, 0])
        for sender, ex in ((0, e0), (1, e1)):
            if ex.payload is not None:
                slot[sender] += len(ex.payload)
                transcript.append({"round": rnd, "instr": ex.instr, "op": ex.key[0], "sender": sender,
                                   "bytes": len(ex.payload),
                                   "sha256": hashlib.sha256(ex.payload).hexdigest()[:16]})
        if e0.payload is not None or e1.payload is not None:
            slot[2] += 1
            rnd += 1
        step(0, e1.payload)
        step(1, e0.payload)
    if dealer.remaining(0) or dealer.remaining(1):
        raise P.ProtocolError(f"triple accounting: {dealer.remaining(0)} provisioned entries unused")

    acc = CostAccumulator()
    log = iter(dealer.log[0])
    for k, ins in enumerate(p0.instrs):
        if not ins.comm:
            continue
        b0, b1, r = per_instr.get(k, [0, 0, 0])
        st = parties[0].stats.get(k, P.Stats())
        c = OpCost([b0, b1], r, ltz_calls=st.ltz_calls, comparisons=st.comparisons,
                   and_gates=st.and_gates, mul_elems=st.mul_elems)
        n_tr = _triples_for(ins, p0.ring_width)
        c.triples = [next(log) for _ in range(n_tr)]
        acc.add(ins, c)
    outs = [parties[p0.reveal_to].regs[r] for r in p0.outputs]
    trace = _build_trace(parties, ring) if debug else None
    return ExecutionResult(outs, acc.report(), transcript, trace)


def _triples_for(ins: Instr, ring_width: int) -> int:
    from ..backend.cost import instr_cost

    return len(instr_cost(ins, ring_width).triples)


def _build_trace(parties, ring: Ring) -> Trace:
    tr = Trace()
    r0, r1 = parties[0].regs, parties[1].regs
    prog = parties[0].prog
    for ins in prog.instrs:
        v0, v1 = r0.get(ins.out), r1.get(ins.out)
        if ins.op == "reveal":
            tr.values[ins.node] = v0 if v0 is not None else v1
        elif isinstance(v0, np.ndarray) and v0.dtype == np.uint64 and ins.type is not None and ins.type.secret:
            tr.values[ins.node] = ring.decode(ring.add(v0, v1), ins.type.scale)
        elif isinstance(v0, np.ndarray) and v0.dtype != np.uint64:
            tr.values[ins.node] = v0
    for k, recs0 in parties[0].ltz_records.items():
        site = prog.instrs[k].site
        for (x0, o0), (x1, o1) in zip(recs0, parties[1].ltz_records[k]):
            tr.ltz.setdefault(site, []).append((ring.to_signed(ring.add(x0, x1)),
                                                ring.to_signed(ring.add(o0, o1))))
    return tr
