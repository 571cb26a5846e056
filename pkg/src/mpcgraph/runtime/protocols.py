"""Two-party protocols over additive shares mod 2^N.

Interactive protocols are generators: each ``yield Exchange(payload)``
is one message-delivery epoch and evaluates to the peer's payload for
that epoch.  ``run_pair`` drives two such generators in lockstep; the
program engine does the same with instruction bookkeeping on top.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Generator

import numpy as np

from .. import opdefs
from . import kernels
from .dealer import Dealer, TripleShare
from .ring import Ring, pack_bits, unpack_bits


class ProtocolError(Exception):
    pass


@dataclass
class Exchange:
    payload: bytes | None
    instr: int = -1
    key: tuple = ()


@dataclass
class ShareTensor:
    values: np.ndarray
    scale: int
    party: int


@dataclass
class Stats:
    ltz_calls: int = 0
    comparisons: int = 0
    and_gates: int = 0
    mul_elems: int = 0


@dataclass
class Context:
    party: int
    ring: Ring
    dealer: Dealer
    rng: np.random.Generator
    stats: Stats = field(default_factory=Stats)
    # debug hook: called with (input share, output share) after every ltz
    probe: object = None

    def triple(self, kind: str, size: int) -> TripleShare:
        return self.dealer.take(self.party, kind, size)


Proto = Generator[Exchange, "bytes | None", object]


def _expect(msg, what: str) -> bytes:
    if msg is None:
        raise ProtocolError(f"expected a message from the peer during {what}")
    return msg


# ---------------------------------------------------------------- local operations

def share(x, ring: Ring, rng: np.random.Generator, scale: int = 1) -> tuple[ShareTensor, ShareTensor]:
    """share0 = x - r, share1 = r for ring-encoded x."""
    x = ring.wrap(x)
    r = ring.random(rng, x.shape)
    return ShareTensor(ring.sub(x, r), scale, 0), ShareTensor(r, scale, 1)


def reconstruct(s0: ShareTensor, s1: ShareTensor, ring: Ring) -> np.ndarray:
    return ring.add(s0.values, s1.values)


def add_shares(a: ShareTensor, b: ShareTensor, ring: Ring) -> ShareTensor:
    return ShareTensor(ring.add(a.values, b.values), a.scale, a.party)


def add_public(a: ShareTensor, c, ring: Ring) -> ShareTensor:
    """Only party 0 adds the public ring value."""
    if a.party == 0:
        return ShareTensor(ring.add(a.values, c), a.scale, 0)
    return ShareTensor(a.values.copy(), a.scale, a.party)


def mul_public(a: ShareTensor, c, ring: Ring) -> ShareTensor:
    return ShareTensor(ring.mul(a.values, ring.wrap(c)), a.scale, a.party)


def trunc_local(a: ShareTensor, s: int, ring: Ring) -> ShareTensor:
    """Each party arithmetic-shifts its signed share by log2(s)."""
    k = int(s).bit_length() - 1
    return ShareTensor(ring.shift(a.values, k), a.scale // s if a.scale >= s else 1, a.party)


# ---------------------------------------------------------------- Beaver multiplication

def beaver_mul(ctx: Context, x: np.ndarray, y: np.ndarray, triple: TripleShare | None = None) -> Proto:
    """Element-wise product of equally shaped shares."""
    ring = ctx.ring
    x, y = np.asarray(x, np.uint64), np.asarray(y, np.uint64)
    if x.shape != y.shape:
        raise ProtocolError(f"beaver_mul operands differ in shape: {x.shape} vs {y.shape}")
    n = x.size
    if triple is None:
        triple = ctx.triple("arith", n)
    a, b, c = triple.consume()
    if a.size != n:
        raise ProtocolError(f"triple of size {a.size} for {n} products")
    d = ring.sub(x.reshape(-1), a)
    e = ring.sub(y.reshape(-1), b)
    msg = yield Exchange(ring.to_bytes(np.concatenate([d, e])))
    peer = ring.from_bytes(_expect(msg, "beaver_mul"), (2, n))
    D = ring.add(d, peer[0])
    E = ring.add(e, peer[1])
    z = ring.add(c, ring.add(ring.mul(D, b), ring.mul(E, a)))
    if ctx.party == 0:
        z = ring.add(z, ring.mul(D, E))
    ctx.stats.mul_elems += n
    return z.reshape(x.shape)


def expand_operands(kind: str, x: np.ndarray, y: np.ndarray, attrs: dict, out_shape):
    """Broadcast both operands over the expanded product index set.

    Returns (X, Y, reduce) with X, Y of identical shape and ``reduce``
    mapping the element-wise product back to the operator's output.
    """
    if kind == "mul":
        X, Y = np.broadcast_arrays(x, y)
        return X, Y, lambda z, ring: z.reshape(out_shape)
    if kind == "matmul":
        vec_a, vec_b = x.ndim == 1, y.ndim == 1
        a = x[None, :] if vec_a else x
        b = y[:, None] if vec_b else y
        A = a[..., :, :, None]
        B = b[..., None, :, :]
        X, Y = np.broadcast_arrays(A, B)

        def reduce(z, ring):
            return (z.sum(axis=-2) & ring.mask).reshape(out_shape)
        return X, Y, reduce
    if kind == "conv2d":
        w = y
        P = opdefs.conv2d_patches(x, w.shape[2], w.shape[3])  # [..., H', W', K]
        W2 = w.reshape(w.shape[0], -1)  # [O, K]
        X, Y = np.broadcast_arrays(P[..., None, :], W2)

        def reduce(z, ring):
            out = z.sum(axis=-1) & ring.mask  # [..., H', W', O]
            return np.moveaxis(out, -1, -3).reshape(out_shape)
        return X, Y, reduce
    raise ProtocolError(f"unknown mul-like kind {kind!r}")


def mul_like_mpc(ctx: Context, kind: str, x, y, attrs, out_shape) -> Proto:
    X, Y, reduce = expand_operands(kind, x, y, attrs, out_shape)
    z = yield from beaver_mul(ctx, np.ascontiguousarray(X), np.ascontiguousarray(Y))
    return reduce(z, ctx.ring)


def mul_local(ring: Ring, kind: str, x, y, attrs) -> np.ndarray:
    if kind == "mul":
        return ring.mul(x, y)
    if kind == "matmul":
        return ring.matmul(x, y)
    if kind == "conv2d":
        P = opdefs.conv2d_patches(x, y.shape[2], y.shape[3])
        out = ring.matmul(P, np.ascontiguousarray(y.reshape(y.shape[0], -1).T))
        return np.moveaxis(out, -1, -3)
    raise ProtocolError(f"unknown mul-like kind {kind!r}")


# ---------------------------------------------------------------- GMW comparison

def and_gates(ctx: Context, x: np.ndarray, y: np.ndarray) -> Proto:
    """AND of XOR-shared bit arrays with Beaver bit triples; one epoch."""
    n = x.size
    t = ctx.triple("bool", n)
    a, b, c = t.consume()
    d = x.reshape(-1) ^ a
    e = y.reshape(-1) ^ b
    msg = yield Exchange(pack_bits(np.concatenate([d, e])))
    peer = unpack_bits(_expect(msg, "and_gates"), (2, n))
    D, E = d ^ peer[0], e ^ peer[1]
    z = c ^ (D & b) ^ (E & a)
    if ctx.party == 0:
        z = z ^ (D & E)
    ctx.stats.and_gates += n
    return z.reshape(x.shape)


def b2a(ctx: Context, s: np.ndarray) -> Proto:
    """XOR-shared bits to additive shares via a dealer daBit."""
    ring = ctx.ring
    n = s.size
    rb, ra, _ = ctx.triple("dabit", n).consume()
    c = s.reshape(-1) ^ rb
    msg = yield Exchange(pack_bits(c))
    c = c ^ unpack_bits(_expect(msg, "b2a"), (n,))
    cu = c.astype(np.uint64)
    out = ring.sub(ra, ring.mul(np.uint64(2), ring.mul(cu, ra)))
    if ctx.party == 0:
        out = ring.add(out, cu)
    return out.reshape(s.shape)


def ltz(ctx: Context, x: np.ndarray, w: int) -> Proto:
    """Arithmetic shares of [x < 0], reading only the low ``w`` bits of each share.

    The sign of (x0 + x1) mod 2^w is p[w-1] xor carry[w-1]; the carry is the
    group generate of positions 0..w-2, computed with a Kogge-Stone prefix.
    """
    N = ctx.ring.width
    if not 1 <= w <= N:
        raise ProtocolError(f"comparison window {w} outside [1, {N}]")
    shape = np.shape(x)
    bits = kernels.bit_decompose(np.asarray(x, np.uint64).reshape(-1), w)  # [n, w]
    zeros = np.zeros_like(bits)
    mine_a, mine_b = (bits, zeros) if ctx.party == 0 else (zeros, bits)
    p = bits  # p = a xor b, shared as (a, b)
    m = w - 1
    sign = p[:, w - 1].copy()
    if m > 0:
        G = yield from and_gates(ctx, mine_a[:, :m], mine_b[:, :m])
        P = p[:, :m].copy()
        d = 1
        while d < m:
            lhs = np.concatenate([P[:, d:], P[:, d:]], axis=1)
            rhs = np.concatenate([G[:, :-d], P[:, :-d]], axis=1)
            t = yield from and_gates(ctx, lhs, rhs)
            G = G.copy()
            G[:, d:] ^= t[:, : m - d]
            P = P.copy()
            P[:, d:] = t[:, m - d:]
            d *= 2
        sign ^= G[:, m - 1]
    out = yield from b2a(ctx, sign)
    ctx.stats.ltz_calls += 1
    ctx.stats.comparisons += sign.size
    out = out.reshape(shape)
    if ctx.probe is not None:
        ctx.probe(np.asarray(x, np.uint64), out)
    return out


def reduce_groups(x: np.ndarray, op: str, attrs: dict) -> np.ndarray:
    """View the reduced elements of each output position as rows: [groups, length]."""
    if op == "maxpool":
        win = opdefs.pool_windows(x, attrs["kernel"])
        return win.reshape(-1, win.shape[-1])
    axis = attrs.get("axis")
    if axis is None:
        return x.reshape(1, -1)
    axes = [axis] if isinstance(axis, int) else list(axis)
    dst = list(range(-len(axes), 0))
    moved = np.moveaxis(x, axes, dst)
    length = int(np.prod([x.shape[a] for a in axes]))
    return moved.reshape(-1, length)


def max_tree(ctx: Context, rows: np.ndarray, w: int) -> Proto:
    """Pairwise tree maximum along the last axis: c = 1 - ltz(a - b); out = b + c(a - b)."""
    ring = ctx.ring
    v = np.asarray(rows, np.uint64)
    while v.shape[-1] > 1:
        half = v.shape[-1] // 2
        a, b = v[:, :half], v[:, half:2 * half]
        d = ring.sub(a, b)
        s = yield from ltz(ctx, d, w)
        c = ring.neg(s)
        if ctx.party == 0:
            c = ring.add(c, np.uint64(1))
        cd = yield from beaver_mul(ctx, c, d)
        merged = ring.add(b, cd)
        v = np.concatenate([merged, v[:, 2 * half:]], axis=1)
    return v[:, 0]


# ---------------------------------------------------------------- driver

def run_pair(gen0: Proto, gen1: Proto, log: list | None = None) -> tuple:
    """Drive two protocol generators in lockstep; returns both results.

    ``log`` receives one (round, bytes0, bytes1) tuple per epoch.
    """
    gens = [gen0, gen1]
    cur: list = [None, None]
    res: list = [None, None]
    done = [False, False]

    def step(i, reply):
        try:
            cur[i] = gens[i].send(reply)
        except StopIteration as stop:
            done[i] = True
            res[i] = stop.value

    step(0, None)
    step(1, None)
    rnd = 0
    while not all(done):
        if any(done):
            waiting = 0 if not done[0] else 1
            raise ProtocolError(f"party {waiting} waits for a message but party {1 - waiting} finished")
        p0, p1 = cur[0].payload, cur[1].payload
        if log is not None:
            log.append((rnd, len(p0 or b""), len(p1 or b"")))
        rnd += 1
        step(0, p1)
        step(1, p0)
    return res[0], res[1]
