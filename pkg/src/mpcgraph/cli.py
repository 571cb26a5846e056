"""Batch driver: compile, tune, run and report.

A project is one JSON file; relative paths inside it resolve against the
file's directory and command-line flags override its fields.  Every
artifact is written as sorted-key JSON so identical inputs and seeds give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import fixtures, hummingbird
from .approx.engine import ApproxError, rewrite_fixpoint
from .approx.library import make_passes
from .backend import LowerConfig, LoweringError, lower_pair, static_cost, typecheck_lowered
from .frontend import Annotation, FrontendError, run_frontend
from .interp import interpret
from .ir import GraphError, deserialize, serialize, validate
from .runtime.dealer import DealerError
from .runtime.engine import execute, split_inputs
from .runtime.protocols import ProtocolError
from .tensorio import load_dataset
from .tuner import TunerConfig, TunerError, assignment_from_json, assignment_to_json, tune

EXIT_OK, EXIT_CONFIG, EXIT_COMPILE, EXIT_PROTOCOL, EXIT_MISMATCH = 0, 1, 2, 3, 4
FIXTURES = {"mlp": fixtures.mlp, "transformer_block": fixtures.transformer_block,
            "two_softmax": fixtures.two_softmax}


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write(path: Path, obj) -> None:
    path.write_text(_dump(obj) if not isinstance(obj, str) else obj)


# ---------------------------------------------------------------- config

@dataclass
class ProjectConfig:
    graph: object  # Graph
    annotation: Annotation
    passes: list
    tuner: TunerConfig
    dataset: dict[str, np.ndarray] | None
    labels: np.ndarray | None
    inputs: dict[str, np.ndarray] | None
    knobs: dict = field(default_factory=dict)
    ring_width: int = 64
    scale: int = 1 << 16
    hummingbird: str = "off"
    margin: float = 2.0
    reveal_to: int | None = None
    seed: int = 0
    out_dir: Path = Path("out")

    def lower_config(self, windows: Mapping[str, int] | None = None) -> LowerConfig:
        default = hummingbird.STATIC_WINDOW if self.hummingbird in ("static", "recorded") else None
        return LowerConfig(self.ring_width, self.scale, self.reveal_to, default, dict(windows or {}))


_KEYS = {"graph", "fixture", "annotation", "passes", "tuner", "dataset", "labels", "inputs", "knobs",
         "ring_width", "scale", "hummingbird", "margin", "reveal_to", "seed", "out_dir"}


def load_config(path: str | Path, overrides: Mapping | None = None) -> ProjectConfig:
    def fail(msg):
        raise StageError("config", msg, EXIT_CONFIG)

    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        fail(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        fail(f"{path}: invalid JSON ({exc})")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    extra = set(doc) - _KEYS
    if extra:
        fail(f"unknown config field(s) {sorted(extra)}")
    base = path.parent

    def rel(p):
        q = Path(p)
        q = q if q.is_absolute() else base / q
        if not q.exists():
            fail(f"referenced file {q} does not exist")
        return q

    dataset = labels = None
    if "fixture" in doc:
        spec = doc["fixture"]
        spec = {"name": spec} if isinstance(spec, str) else dict(spec)
        name = spec.pop("name")
        if name not in FIXTURES:
            fail(f"unknown fixture {name!r}; expected one of {sorted(FIXTURES)}")
        fx = FIXTURES[name](**spec)
        graph, ann_doc, dataset, labels = fx.graph, fx.annotation, fx.dataset, fx.labels
    elif "graph" in doc:
        try:
            graph = deserialize(rel(doc["graph"]).read_text())
        except GraphError as exc:
            raise StageError("graph", str(exc), EXIT_CONFIG) from None
        ann_doc = {}
    else:
        fail("config needs either 'graph' or 'fixture'")
    if "annotation" in doc:
        a = doc["annotation"]
        ann_doc = a if isinstance(a, dict) else json.loads(rel(a).read_text())
    try:
        annotation = Annotation.from_json(ann_doc)
    except FrontendError as exc:
        fail(str(exc))
    def tensors(key):
        try:
            return load_dataset(rel(doc[key]))
        except (ValueError, OSError) as exc:
            fail(f"{key}: {exc}")

    if "dataset" in doc:
        dataset = tensors("dataset")
    if "labels" in doc:
        labels = np.load(rel(doc["labels"])) if str(doc["labels"]).endswith(".npy") else \
            np.asarray(json.loads(rel(doc["labels"]).read_text()))
    inputs = tensors("inputs") if "inputs" in doc else None
    try:
        passes = make_passes(doc.get("passes"))
    except (KeyError, ApproxError) as exc:
        fail(str(exc).strip('"'))
    try:
        tcfg = TunerConfig.from_json(doc.get("tuner", {}))
    except (TunerError, TypeError) as exc:
        fail(f"tuner: {exc}")
    knobs = {}
    if "knobs" in doc:
        k = doc["knobs"]
        knobs = assignment_from_json(k if isinstance(k, dict) else json.loads(rel(k).read_text()))
    hb = doc.get("hummingbird", "off")
    if hb not in hummingbird.MODES:
        fail(f"hummingbird mode {hb!r} not in {hummingbird.MODES}")
    out_dir = Path(doc.get("out_dir", "out"))
    if not out_dir.is_absolute() and (overrides or {}).get("out_dir") is None:
        out_dir = base / out_dir
    try:
        cfg = ProjectConfig(graph, annotation, passes, tcfg, dataset, labels, inputs, knobs,
                            int(doc.get("ring_width", 64)), int(doc.get("scale", 1 << 16)), hb,
                            float(doc.get("margin", 2.0)), doc.get("reveal_to"), int(doc.get("seed", 0)),
                            out_dir)
        cfg.lower_config()
    except (TypeError, ValueError) as exc:
        fail(str(exc))
    return cfg


# ---------------------------------------------------------------- stages

@dataclass
class Compiled:
    annotated: object
    post: object
    programs: tuple
    cost: object
    ranges: dict
    warnings: list


def _frontend(cfg: ProjectConfig):
    errs = validate(cfg.graph, "pre")
    if errs:
        raise StageError("graph", "; ".join(errs), EXIT_COMPILE)
    try:
        return run_frontend(cfg.graph, cfg.annotation)
    except (FrontendError, GraphError) as exc:
        raise StageError("frontend", str(exc), EXIT_COMPILE) from None


def _approx(cfg: ProjectConfig, g, knobs):
    try:
        return rewrite_fixpoint(g, cfg.passes, knobs).graph
    except ApproxError as exc:
        raise StageError("approx", str(exc), EXIT_COMPILE) from None


def compile_project(cfg: ProjectConfig) -> Compiled:
    annotated = _frontend(cfg)
    knobs = dict(cfg.knobs)
    saved = cfg.out_dir / "knobs.json"
    if not knobs and saved.exists():
        knobs = assignment_from_json(json.loads(saved.read_text()))
    post = _approx(cfg, annotated, knobs)
    ranges: dict = {}
    notes: list[str] = []
    try:
        progs = lower_pair(post, cfg.lower_config())
        if cfg.hummingbird == "recorded":
            if cfg.dataset is None:
                raise StageError("hummingbird", "recorded mode needs a calibration dataset", EXIT_CONFIG)
            ranges = hummingbird.record_ranges(post, cfg.dataset, cfg.margin)
            windows = hummingbird.assign_windows(ranges, hummingbird.comparison_scales(progs), cfg.ring_width)
            notes += hummingbird.window_warnings(ranges)
            progs = lower_pair(post, cfg.lower_config(windows))
    except LoweringError as exc:
        raise StageError("lower", str(exc), EXIT_COMPILE) from None
    errs = typecheck_lowered(*progs)
    if errs:
        raise StageError("typecheck", "; ".join(errs), EXIT_COMPILE)
    return Compiled(annotated, post, progs, static_cost(progs), ranges, notes)


def write_compiled(cfg: ProjectConfig, c: Compiled) -> None:
    d = cfg.out_dir
    d.mkdir(parents=True, exist_ok=True)
    for p in c.programs:
        _write(d / f"program{p.party}.json", p.dumps() + "\n")
    _write(d / "graph.post.json", serialize(c.post) + "\n")
    _write(d / "cost.json", c.cost.to_json())
    if c.ranges:
        _write(d / "ranges.json", {s: r.to_json() for s, r in c.ranges.items()})


def cmd_compile(cfg: ProjectConfig) -> dict:
    c = compile_project(cfg)
    write_compiled(cfg, c)
    return {"command": "compile", "out_dir": str(cfg.out_dir.resolve()), "instructions": len(c.programs[0].instrs),
            "bytes": c.cost.bytes, "rounds": c.cost.rounds, "typecheck": "ok", "warnings": c.warnings}


def cmd_tune(cfg: ProjectConfig) -> dict:
    if cfg.dataset is None:
        raise StageError("tune", "tuning needs a dataset", EXIT_CONFIG)
    g = _frontend(cfg)
    refs = cfg.labels if cfg.labels is not None and cfg.tuner.loss == "error_rate" else None
    try:
        res = tune(g, cfg.passes, cfg.tuner, cfg.dataset, refs, cfg.lower_config())
    except TunerError as exc:
        raise StageError("tune", str(exc), EXIT_COMPILE) from None
    except ApproxError as exc:
        raise StageError("approx", str(exc), EXIT_COMPILE) from None
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write(cfg.out_dir / "knobs.json", assignment_to_json(res.assignment))
    _write(cfg.out_dir / "tune_report.json", res.report)
    r = res.report
    return {"command": "tune", "baseline_quality": r["baseline_quality"], "final_quality": r["final_quality"],
            "cost_before": r["cost_before"], "cost_after": r["cost_after"], "warning": r["warning"]}


def cmd_run(cfg: ProjectConfig, tolerance: float | None = None) -> dict:
    c = compile_project(cfg)
    write_compiled(cfg, c)
    if cfg.inputs is not None:
        inputs = cfg.inputs
    elif cfg.dataset is not None:
        inputs = {k: v[0] for k, v in cfg.dataset.items()}
    else:
        raise StageError("run", "no inputs: set 'inputs' or 'dataset' in the config", EXIT_CONFIG)
    try:
        res = execute(c.programs, split_inputs(c.post, inputs), cfg.seed)
    except (ProtocolError, DealerError) as exc:
        raise StageError("runtime", str(exc), EXIT_PROTOCOL) from None
    measured, predicted = res.cost.to_json(), c.cost.to_json()
    try:
        plain = interpret(c.post, inputs)
    except GraphError as exc:
        raise StageError("interpret", str(exc), EXIT_COMPILE) from None
    dev = max((float(np.max(np.abs(np.asarray(a) - b))) if np.size(b) else 0.0) for a, b in zip(res.outputs, plain)) \
        if plain else 0.0
    out = {"outputs": [np.asarray(o).tolist() for o in res.outputs], "cost": measured,
           "max_abs_deviation": dev, "transcript_sha256": res.transcript_digest(),
           "cost_matches_static": measured == predicted}
    d = cfg.out_dir
    _write(d / "run.json", out)
    _write(d / "transcript.json", res.transcript)
    if measured != predicted:
        diff = {k: (predicted[k], measured[k]) for k in predicted if predicted[k] != measured.get(k)}
        raise StageError("run", f"measured cost differs from the static model: {diff}", EXIT_MISMATCH)
    if tolerance is not None and dev > tolerance:
        raise StageError("run", f"max abs deviation {dev:.3e} exceeds tolerance {tolerance:.3e}", EXIT_MISMATCH)
    return {"command": "run", "bytes": res.cost.bytes, "rounds": res.cost.rounds,
            "max_abs_deviation": dev, "cost_matches_static": True}


def report_table(cost: Mapping) -> dict:
    return {cat: {"bytes_pct": round(v["bytes_pct"], 3), "rounds_pct": round(v["rounds_pct"], 3),
                  "bytes": v["bytes"], "rounds": v["rounds"]} for cat, v in cost.get("table", {}).items()}


def cmd_report(out_dir: Path) -> dict:
    path = out_dir / "cost.json"
    if not path.exists():
        raise StageError("report", f"{path} not found; run compile first", EXIT_CONFIG)
    cost = json.loads(path.read_text())
    table = report_table(cost)
    _write(out_dir / "report.json", table)
    return {"command": "report", "table": table, "bytes": [cost["bytes0"], cost["bytes1"]],
            "rounds": cost["rounds"]}


def format_table(table: Mapping) -> str:
    lines = [f"{'category':<12}{'bytes':>12}{'bytes %':>10}{'rounds':>9}{'rounds %':>10}"]
    for cat, v in table.items():
        lines.append(f"{cat:<12}{v['bytes']:>12}{v['bytes_pct']:>10.2f}{v['rounds']:>9}{v['rounds_pct']:>10.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mpcgraph", description="Compile and simulate two-party tensor programs.")
    ap.add_argument("command", choices=["compile", "tune", "run", "report"])
    ap.add_argument("--config", help="project JSON file (not needed for report with --out-dir)")
    ap.add_argument("--hummingbird", choices=hummingbird.MODES)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--ring-width", type=int)
    ap.add_argument("--scale", type=int)
    ap.add_argument("--threshold", type=float)
    ap.add_argument("--strategy", choices=["greedy-linear", "hill-climbing"])
    ap.add_argument("--out-dir")
    ap.add_argument("--tolerance", type=float, help="run: fail with exit 4 above this deviation")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report" and args.config is None:
            if args.out_dir is None:
                raise StageError("config", "report needs --out-dir or --config", EXIT_CONFIG)
            result = cmd_report(Path(args.out_dir))
        else:
            if args.config is None:
                raise StageError("config", f"{args.command} needs --config", EXIT_CONFIG)
            over = {"hummingbird": args.hummingbird, "seed": args.seed, "ring_width": args.ring_width,
                    "scale": args.scale, "out_dir": args.out_dir}
            cfg = load_config(args.config, over)
            if args.threshold is not None or args.strategy is not None:
                try:
                    cfg.tuner = TunerConfig(**{**cfg.tuner.__dict__,
                                               **({"threshold": args.threshold} if args.threshold is not None else {}),
                                               **({"strategy": args.strategy} if args.strategy else {})})
                except TunerError as exc:
                    raise StageError("config", f"tuner: {exc}", EXIT_CONFIG) from None
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                if args.command == "compile":
                    result = cmd_compile(cfg)
                elif args.command == "tune":
                    result = cmd_tune(cfg)
                elif args.command == "run":
                    result = cmd_run(cfg, args.tolerance)
                else:
                    result = cmd_report(cfg.out_dir)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return exc.code
    if args.command == "report":
        print(format_table(result["table"]))
    else:
        print(_dump(result), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
