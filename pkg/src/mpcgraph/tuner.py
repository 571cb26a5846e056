"""Search over per-site approximation knobs under a loss budget.

Candidates are scored on the plaintext interpreter (quality) and the
static communication model (cost).  Quality is always compared with the
maximally accurate assignment, i.e. every tunable knob at its upper end.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .approx.engine import PassDescriptor, rewrite_fixpoint
from .approx.library import RISKY_KNOBS, default_passes
from .backend import LowerConfig, lower_pair, static_cost
from .interp import interpret_batch
from .ir import Graph, topo_order

STRATEGIES = ("greedy-linear", "hill-climbing")
MAX_SAMPLES = 512


class TunerError(Exception):
    pass


# ---------------------------------------------------------------- losses

def _probs(out: np.ndarray) -> np.ndarray:
    return np.clip(out, 1e-12, None)


def _targets(refs: np.ndarray, out: np.ndarray) -> np.ndarray:
    refs = np.asarray(refs)
    if refs.shape == out.shape:
        return refs.astype(np.float64)
    return np.eye(out.shape[-1])[refs.astype(np.int64)]


def cross_entropy(out: np.ndarray, refs: np.ndarray) -> float:
    """Mean cross entropy of probability outputs against labels or soft targets."""
    t = _targets(refs, out)
    return float(np.mean(-(t * np.log(_probs(out))).sum(axis=-1)))


def mse(out: np.ndarray, refs: np.ndarray) -> float:
    return float(np.mean((out - _targets(refs, out)) ** 2))


def error_rate(out: np.ndarray, refs: np.ndarray) -> float:
    t = _targets(refs, out)
    return float(np.mean(out.argmax(axis=-1) != t.argmax(axis=-1)))


LOSSES: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "cross_entropy": cross_entropy, "mse": mse, "error_rate": error_rate}


# ---------------------------------------------------------------- config and state

@dataclass
class TunerConfig:
    strategy: str = "greedy-linear"
    loss: str = "cross_entropy"  # loss, not accuracy: it moves in finer steps
    threshold: float = 0.0  # absolute loss delta over the most accurate assignment
    max_steps: int | None = None  # default 10 x number of tunable knobs
    seed: int = 0
    max_samples: int = MAX_SAMPLES
    frozen: tuple = ()  # "site:knob" entries kept at their most accurate value

    def __post_init__(self):
        self.frozen = tuple(self.frozen)
        if self.strategy not in STRATEGIES:
            raise TunerError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.loss not in LOSSES:
            raise TunerError(f"unknown loss {self.loss!r}; expected one of {sorted(LOSSES)}")
        if not self.threshold >= 0:
            raise TunerError("threshold must be >= 0")

    @classmethod
    def from_json(cls, doc: Mapping) -> TunerConfig:
        known = {"strategy", "loss", "threshold", "max_steps", "seed", "max_samples", "frozen"}
        extra = set(doc) - known
        if extra:
            raise TunerError(f"unknown tuner option(s) {sorted(extra)}")
        return cls(**doc)


@dataclass(frozen=True)
class KnobRef:
    site: str
    knob: str
    lo: int
    hi: int


@dataclass
class Step:
    site: str
    knob: str
    value: int
    quality: float
    delta: float
    cost: int
    accepted: bool

    def to_json(self) -> dict:
        return {"site": self.site, "knob": self.knob, "value": self.value, "quality": self.quality,
                "delta": self.delta, "cost": self.cost, "accepted": self.accepted}


@dataclass
class TunerState:
    current: dict
    baseline_quality: float
    baseline_cost: int
    history: list[Step] = field(default_factory=list)


@dataclass
class TuneResult:
    assignment: dict  # (site, knob) -> value
    graph: Graph
    report: dict


def assignment_to_json(a: Mapping) -> dict:
    out: dict[str, dict[str, int]] = {}
    for (site, knob), v in sorted(a.items()):
        out.setdefault(site, {})[knob] = int(v)
    return out


def assignment_from_json(doc: Mapping) -> dict:
    return {(site, knob): int(v) for site, knobs in doc.items() for knob, v in knobs.items()}


# ---------------------------------------------------------------- evaluation

class Evaluator:
    """Pure, cached scoring of knob assignments for one graph and dataset."""

    def __init__(self, graph: Graph, dataset: Mapping[str, np.ndarray], references,
                 loss: str = "cross_entropy", passes: Sequence[PassDescriptor] | None = None,
                 lower_cfg: LowerConfig | None = None):
        if not dataset:
            raise TunerError("dataset is empty")
        counts = {len(v) for v in dataset.values()}
        if len(counts) != 1:
            raise TunerError(f"dataset arrays disagree on sample count: {sorted(counts)}")
        names = {n for n, _ in graph.inputs}
        missing = names - set(dataset)
        if missing:
            raise TunerError(f"dataset lacks input(s) {sorted(missing)}")
        self.graph = graph
        self.dataset = {n: np.asarray(dataset[n], np.float64) for n in names}
        for nid in graph.input_ids.values():
            node = graph.nodes[nid]
            if self.dataset[node.attrs["name"]].shape[1:] != node.meta.shape:
                raise TunerError(f"dataset shape mismatch for input {node.attrs['name']!r}: "
                                 f"{self.dataset[node.attrs['name']].shape[1:]} vs {node.meta.shape}")
        self.references = None if references is None else np.asarray(references)
        self.loss_name = loss
        self.loss = LOSSES[loss]
        self.passes = list(passes) if passes is not None else default_passes()
        self.lower_cfg = lower_cfg or LowerConfig()
        self.cache: dict[frozenset, tuple[float, int]] = {}
        self.evaluations = 0

    def rewrite(self, knobs: Mapping):
        return rewrite_fixpoint(self.graph, self.passes, knobs)

    def __call__(self, knobs: Mapping) -> tuple[float, int]:
        key = frozenset(knobs.items())
        if key not in self.cache:
            self.evaluations += 1
            g = self.rewrite(knobs).graph
            out = interpret_batch(g, self.dataset)[0]
            if self.references is None:
                raise TunerError("no references: call set_maximal_references first")
            q = self.loss(out, self.references) if np.all(np.isfinite(out)) else float("inf")
            cost = sum(static_cost(lower_pair(g, self.lower_cfg)).bytes)
            self.cache[key] = (float(q), int(cost))
        return self.cache[key]

    def set_maximal_references(self, maximal: Mapping) -> None:
        """Score against the outputs of the most accurate assignment (soft targets)."""
        self.references = interpret_batch(self.rewrite(maximal).graph, self.dataset)[0]
        self.cache.clear()

    def knob_space(self) -> tuple[list[KnobRef], dict]:
        """Tunable knobs in visit order and the maximal assignment.

        Sites are visited in topological order of the node that carries the
        site's result in the maximal rewrite; within a site, risky knobs
        (clamp) come last.
        """
        by_name = {p.name: p for p in self.passes}
        maximal: dict = {}
        refs: list[KnobRef] = []
        # nested sites (exp inside softmax) appear once their parent is rewritten
        for _ in range(len(self.passes) + 1):
            res = self.rewrite(maximal)
            fresh = False
            for rec in res.sites:
                for k in by_name[rec.pass_name].knobs:
                    if k.tunable and (rec.site_id, k.name) not in maximal:
                        maximal[(rec.site_id, k.name)] = k.hi
                        fresh = True
            if not fresh:
                break
        pos = {}
        for i, nid in enumerate(topo_order(res.graph)):
            pos.setdefault(res.graph.nodes[nid].site_id, i)
        for rec in sorted(res.sites, key=lambda r: (pos.get(r.site_id, len(pos)), r.site_id)):
            knobs = [k for k in by_name[rec.pass_name].knobs if k.tunable]
            knobs.sort(key=lambda k: k.name in RISKY_KNOBS)
            refs += [KnobRef(rec.site_id, k.name, k.lo, k.hi) for k in knobs]
        return refs, maximal


def evaluate_candidate(graph: Graph, knobs: Mapping, dataset: Mapping[str, np.ndarray], loss_fn: str,
                       references, passes=None, lower_cfg=None) -> tuple[float, int]:
    """(mean loss over the dataset, total bytes of the lowered program pair)."""
    return Evaluator(graph, dataset, references, loss_fn, passes, lower_cfg)(knobs)


# ---------------------------------------------------------------- search

def _subsample(dataset, references, cfg: TunerConfig):
    n = len(next(iter(dataset.values())))
    if n <= cfg.max_samples:
        return dataset, references
    idx = np.sort(np.random.default_rng(cfg.seed).choice(n, cfg.max_samples, replace=False))
    return {k: v[idx] for k, v in dataset.items()}, None if references is None else np.asarray(references)[idx]


def _greedy(ev: Evaluator, refs: list[KnobRef], state: TunerState, thr: float, max_steps: int) -> bool:
    steps = 0
    for r in refs:
        while state.current[(r.site, r.knob)] > r.lo:
            if steps >= max_steps:
                return True
            cand = dict(state.current)
            cand[(r.site, r.knob)] -= 1
            q, c = ev(cand)
            delta = q - state.baseline_quality
            ok = delta <= thr
            state.history.append(Step(r.site, r.knob, cand[(r.site, r.knob)], q, delta, c, ok))
            steps += 1
            if not ok:
                break
            state.current = cand
    return False


def _hill(ev: Evaluator, refs: list[KnobRef], state: TunerState, thr: float, max_steps: int) -> bool:
    q_cur, c_cur = ev(state.current)
    for _ in range(max_steps):
        best = None
        for r in refs:
            if state.current[(r.site, r.knob)] <= r.lo:
                continue
            cand = dict(state.current)
            cand[(r.site, r.knob)] -= 1
            q, c = ev(cand)
            delta = q - state.baseline_quality
            if delta > thr or c >= c_cur:
                continue
            gain = c_cur - c
            hurt = q - q_cur
            ratio = float("inf") if hurt <= 0 else gain / hurt
            key = (ratio, gain)
            if best is None or key > best[0]:
                best = (key, r, cand, q, delta, c)
        if best is None:
            return False
        _, r, cand, q, delta, c = best
        state.history.append(Step(r.site, r.knob, cand[(r.site, r.knob)], q, delta, c, True))
        state.current, q_cur, c_cur = cand, q, c
    # budget spent: warn only if an admissible move was still available
    for r in refs:
        if state.current[(r.site, r.knob)] > r.lo:
            cand = dict(state.current)
            cand[(r.site, r.knob)] -= 1
            q, c = ev(cand)
            if q - state.baseline_quality <= thr and c < c_cur:
                return True
    return False


def tune(graph: Graph, passes: Sequence[PassDescriptor] | None, config: TunerConfig,
         dataset: Mapping[str, np.ndarray], references=None, lower_cfg: LowerConfig | None = None) -> TuneResult:
    """Search knob assignments; every accepted assignment stays within the loss budget.

    ``references`` are labels or target distributions; by default the
    outputs of the most accurate assignment serve as soft targets, so the
    baseline is the loss minimum and any output change counts as a loss.
    """
    dataset, references = _subsample(dataset, references, config)
    ev = Evaluator(graph, dataset, references, config.loss, passes, lower_cfg)
    refs, maximal = ev.knob_space()
    frozen = set(config.frozen)
    unknown = frozen - {f"{r.site}:{r.knob}" for r in refs}
    if unknown:
        raise TunerError(f"frozen knob(s) {sorted(unknown)} not present in the graph")
    refs = [r for r in refs if f"{r.site}:{r.knob}" not in frozen]
    if references is None:
        ev.set_maximal_references(maximal)
    try:
        q0, c0 = ev(maximal)
    except Exception as exc:
        raise TunerError(f"baseline evaluation failed: {exc}") from exc
    if not np.isfinite(q0):
        raise TunerError("baseline evaluation produced non-finite outputs")
    state = TunerState(dict(maximal), q0, c0)
    max_steps = config.max_steps if config.max_steps is not None else 10 * len(refs)
    search = _greedy if config.strategy == "greedy-linear" else _hill
    exhausted = search(ev, refs, state, config.threshold, max_steps)
    if exhausted:
        warnings.warn("tuner step budget exhausted; returning the best assignment so far", RuntimeWarning)
    q1, c1 = ev(state.current)
    res = ev.rewrite(state.current)
    report = {
        "strategy": config.strategy, "loss": config.loss, "threshold": config.threshold,
        "samples": len(ev.references), "references": "given" if references is not None else "maximal", "baseline_quality": q0, "final_quality": q1,
        "final_delta": q1 - q0, "cost_before": c0, "cost_after": c1,
        "knobs": assignment_to_json(state.current), "maximal": assignment_to_json(maximal),
        "history": [s.to_json() for s in state.history], "evaluations": ev.evaluations,
        "max_steps": max_steps, "warning": "step budget exhausted" if exhausted else None,
    }
    return TuneResult(state.current, res.graph, report)


def save_report(path: str | Path, report: Mapping) -> None:
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True))
