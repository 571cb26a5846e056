"""Trusted dealer handing out correlated randomness from a fixed plan."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ring import Ring


class DealerError(Exception):
    pass


class TripleReuseError(DealerError):
    pass


@dataclass
class TripleShare:
    """One party's share of a correlated tuple; refuses a second use."""

    kind: str
    index: int
    parts: tuple
    used: bool = False

    def consume(self) -> tuple:
        if self.used:
            raise TripleReuseError(f"{self.kind} triple #{self.index} already consumed")
        self.used = True
        return self.parts


def _split_arith(ring: Ring, rng, x):
    x0 = ring.random(rng, x.shape)
    return x0, ring.sub(x, x0)


def _split_bool(rng, x):
    x0 = rng.integers(0, 2, size=x.shape, dtype=np.uint8)
    return x0, x ^ x0


class Dealer:
    """Pre-provisioned with a plan of (kind, size) entries consumed in order by both parties.

    kinds: ``arith`` (a, b, a*b mod 2^N), ``bool`` (bits a, b, a&b) and
    ``dabit`` (a random bit shared both XOR-wise and additively).
    """

    def __init__(self, ring: Ring, plan, seed=0):
        self.ring = ring
        self.plan = [(str(k), int(n)) for k, n in plan]
        self.rng = np.random.default_rng(seed)
        self.cursor = [0, 0]
        self._pending: dict[int, list] = {}
        self.log: list[list[tuple[str, int]]] = [[], []]

    def remaining(self, party: int) -> int:
        return len(self.plan) - self.cursor[party]

    def take(self, party: int, kind: str, size: int) -> TripleShare:
        k = self.cursor[party]
        if k >= len(self.plan):
            raise DealerError(f"triple exhaustion: party {party} requested {kind}[{size}] "
                              f"beyond the {len(self.plan)} provisioned entries")
        if self.plan[k] != (kind, size):
            raise DealerError(f"triple plan mismatch at entry {k}: requested {kind}[{size}], "
                              f"provisioned {self.plan[k][0]}[{self.plan[k][1]}]")
        if k not in self._pending:
            self._pending[k] = self._generate(k, kind, size)
        pair = self._pending[k]
        share = pair[party]
        pair[party] = None
        if pair[0] is None and pair[1] is None:
            del self._pending[k]
        self.cursor[party] += 1
        self.log[party].append((kind, size))
        return share

    def _generate(self, k: int, kind: str, size: int) -> list:
        rng, ring = self.rng, self.ring
        if kind == "arith":
            a, b = ring.random(rng, size), ring.random(rng, size)
            c = ring.mul(a, b)
            sa, sb, sc = (_split_arith(ring, rng, v) for v in (a, b, c))
        elif kind == "bool":
            a = rng.integers(0, 2, size=size, dtype=np.uint8)
            b = rng.integers(0, 2, size=size, dtype=np.uint8)
            sa, sb, sc = (_split_bool(rng, v) for v in (a, b, a & b))
        elif kind == "dabit":
            r = rng.integers(0, 2, size=size, dtype=np.uint8)
            sa = _split_bool(rng, r)
            sb = _split_arith(ring, rng, r.astype(np.uint64))
            sc = (None, None)
        else:
            raise DealerError(f"unknown correlation kind {kind!r}")
        return [TripleShare(kind, k, (sa[i], sb[i], sc[i])) for i in (0, 1)]
