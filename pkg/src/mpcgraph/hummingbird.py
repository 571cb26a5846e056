"""Per-site comparison windows from ranges observed on a plaintext calibration run.

A comparison on a ring value x reads only the low w bits of each share and
is exact when -2^(w-1) <= x < 2^(w-1).  Recording the hull of every
comparison input (and of every pairwise difference inside max kernels)
lets each site use the narrowest window that covers the calibration data
with a safety margin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .approx.library import max_tree_reference
from .interp import interpret
from .ir import Graph, Node
from .opdefs import pool_windows

STATIC_WINDOW = 33  # covers [-2^32, 2^32)
MIN_WINDOW = 8
MODES = ("off", "static", "recorded")


@dataclass
class SiteRange:
    site_id: str
    observed_min: float
    observed_max: float
    margin: float = 2.0
    w: int | None = None

    def to_json(self) -> dict:
        return {"min": self.observed_min, "max": self.observed_max, "margin": self.margin, "w": self.w}


def window_for(lo: float, hi: float, scale: int, margin: float = 2.0, ring_width: int = 64) -> int:
    """Smallest window whose signed range [-2^(w-1), 2^(w-1)) holds the margin-scaled hull."""
    if margin < 1:
        raise ValueError("margin must be at least 1")
    top = margin * max(hi, 0.0) * scale
    bottom = margin * max(-lo, 0.0) * scale
    if not (math.isfinite(top) and math.isfinite(bottom)):
        return ring_width
    pos, neg = math.ceil(top), math.ceil(bottom)
    w = max(pos.bit_length() + 1, (neg - 1).bit_length() + 1 if neg > 0 else 1)
    return max(MIN_WINDOW, min(ring_width, w))


def _max_diffs(node: Node, x: np.ndarray) -> np.ndarray:
    if node.op == "maxpool":
        rows = pool_windows(x, node.attrs["kernel"])
    else:
        axis = node.attrs.get("axis")
        if axis is None:
            rows = x.reshape(-1)
        else:
            axes = [axis] if isinstance(axis, int) else list(axis)
            rows = np.moveaxis(x, axes, list(range(-len(axes), 0)))
            rows = rows.reshape(rows.shape[: x.ndim - len(axes)] + (-1,))
    _, diffs = max_tree_reference(rows)
    if not diffs:
        return np.zeros(0)
    return np.concatenate([d.reshape(-1) for d in diffs])


def record_ranges(graph: Graph, dataset: Mapping[str, np.ndarray], margin: float = 2.0) -> dict[str, SiteRange]:
    """Min/max of every comparison input over the dataset (leading axis = samples).

    Sites that never execute are absent; a max kernel with a single element
    compares nothing and is absent as well.
    """
    lo: dict[str, float] = {}
    hi: dict[str, float] = {}

    def hook(node: Node, args, val):
        if node.op == "ltz":
            v = np.asarray(args[0]).reshape(-1)
        elif node.op in ("max", "maxpool"):
            v = _max_diffs(node, np.asarray(args[0]))
        else:
            return
        if v.size == 0:
            return
        lo[node.site_id] = min(lo.get(node.site_id, np.inf), float(v.min()))
        hi[node.site_id] = max(hi.get(node.site_id, -np.inf), float(v.max()))

    names = [n for n, _ in graph.inputs]
    count = len(next(iter(dataset.values())))
    for k in range(count):
        interpret(graph, {n: dataset[n][k] for n in names}, hook)
    return {s: SiteRange(s, lo[s], hi[s], margin) for s in sorted(lo)}


def assign_windows(ranges: Mapping[str, SiteRange], scales: Mapping[str, int], ring_width: int = 64) -> dict[str, int]:
    """Window per site given the fixed-point scale of each site's comparison input."""
    out = {}
    for site, r in ranges.items():
        r.w = window_for(r.observed_min, r.observed_max, scales[site], r.margin, ring_width)
        out[site] = r.w
    return out


def comparison_scales(programs) -> dict[str, int]:
    """Input scale of every ltz_mpc / max_kernel site in a lowered program."""
    prog = programs[0] if isinstance(programs, (tuple, list)) else programs
    return {ins.site: ins.attrs["s_in"] for ins in prog.instrs if ins.op in ("ltz_mpc", "max_kernel")}


def apply_windows(programs, windows: Mapping[str, int], static_default: int = STATIC_WINDOW):
    """Copy of the program pair where every comparison carries its site's window."""
    from dataclasses import replace

    out = []
    for prog in programs:
        instrs = []
        for ins in prog.instrs:
            if ins.op in ("ltz_mpc", "max_kernel"):
                w = min(int(windows.get(ins.site, static_default)), prog.ring_width)
                ins = replace(ins, attrs={**ins.attrs, "w": w})
            instrs.append(ins)
        out.append(replace(prog, instrs=instrs))
    return tuple(out)


def window_warnings(ranges: Mapping[str, SiteRange], slack_bits: int = 1) -> list[str]:
    """Sites whose window leaves fewer than ``slack_bits`` bits above the observed hull."""
    out = []
    for s, r in ranges.items():
        if r.margin < 2 ** slack_bits:
            out.append(f"window-violation possible at {s}: margin {r.margin} leaves under "
                       f"{slack_bits} bit(s) of headroom over the calibration hull")
    return out


def save_ranges(path: str | Path, ranges: Mapping[str, SiteRange]) -> None:
    Path(path).write_text(json.dumps({s: r.to_json() for s, r in ranges.items()}, indent=1, sort_keys=True))


def load_ranges(path: str | Path) -> dict[str, SiteRange]:
    doc = json.loads(Path(path).read_text())
    return {s: SiteRange(s, d["min"], d["max"], d.get("margin", 2.0), d.get("w")) for s, d in doc.items()}
