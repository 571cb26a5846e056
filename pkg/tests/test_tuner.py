import json
import warnings

import numpy as np
import pytest

from conftest import first_decrement_deltas
from mpcgraph import fixtures
from mpcgraph.approx.library import RISKY_KNOBS, default_passes
from mpcgraph.frontend import run_frontend
from mpcgraph.ir import GraphBuilder
from mpcgraph.tuner import (Evaluator, TunerConfig, TunerError, assignment_from_json, assignment_to_json,
                            cross_entropy, error_rate, evaluate_candidate, mse, save_report, tune)


@pytest.fixture(scope="module")
def block():
    fx = fixtures.transformer_block(samples=64)
    return fx, fx.annotated()


@pytest.fixture(scope="module")
def two():
    fx = fixtures.two_softmax()
    return fx, fx.annotated()


def test_default_metric_is_loss():
    cfg = TunerConfig()
    assert cfg.loss == "cross_entropy" and cfg.strategy == "greedy-linear" and cfg.threshold == 0.0


def test_losses():
    p = np.array([[0.25, 0.75]])
    assert cross_entropy(p, np.array([1])) == pytest.approx(-np.log(0.75))
    assert cross_entropy(p, p) == pytest.approx(-(0.25 * np.log(0.25) + 0.75 * np.log(0.75)))
    assert mse(p, np.zeros_like(p)) == pytest.approx((0.25 ** 2 + 0.75 ** 2) / 2)
    assert error_rate(p, np.array([0])) == 1.0


def test_config_errors():
    with pytest.raises(TunerError, match="strategy"):
        TunerConfig(strategy="annealing")
    with pytest.raises(TunerError, match="threshold"):
        TunerConfig(threshold=-1)
    with pytest.raises(TunerError, match="unknown tuner option"):
        TunerConfig.from_json({"thres": 0.1})
    assert TunerConfig.from_json({"threshold": 0.1, "strategy": "hill-climbing"}).threshold == 0.1


def test_dataset_validation(block):
    fx, g = block
    with pytest.raises(TunerError, match="shape mismatch"):
        Evaluator(g, {"x": np.zeros((4, 3, 3))}, None)
    with pytest.raises(TunerError, match="lacks input"):
        Evaluator(g, {"y": np.zeros((4, 8, 16))}, None)
    with pytest.raises(TunerError, match="empty"):
        Evaluator(g, {}, None)


def test_knob_space_order(block):
    _, g = block
    refs, maximal = Evaluator(g, fixtures.transformer_block(samples=2).dataset, None).knob_space()
    sites = [r.site for r in refs]
    assert sites.index("layernorm/3.6.4") < sites.index("softmax/16.2") < sites.index("gelu/27")
    for site in set(sites):
        knobs = [r.knob for r in refs if r.site == site]
        risky = [k in RISKY_KNOBS for k in knobs]
        assert risky == sorted(risky)
    assert all(maximal[(r.site, r.knob)] == r.hi for r in refs)


def test_maximal_knobs_have_zero_delta(block):
    fx, g = block
    ev = Evaluator(g, fx.dataset, None)
    _, maximal = ev.knob_space()
    ev.set_maximal_references(maximal)
    q, _ = ev(maximal)
    assert q == evaluate_candidate(g, maximal, fx.dataset, "cross_entropy", ev.references)[0]


def test_exp_t_decrement_reduces_cost(block):
    fx, g = block
    ev = Evaluator(g, fx.dataset, fx.labels)
    _, maximal = ev.knob_space()
    cand = dict(maximal)
    cand[("softmax/16.2", "t")] = 7
    assert ev(cand)[1] < ev(maximal)[1]


def test_ruinous_knob_blows_the_budget():
    b = GraphBuilder()
    x = b.input("x", [2])
    b.output(b.op("softmax", x, axis=-1))
    g = run_frontend(b.build(), {"secrets": {"x": [0]}})
    data = {"x": np.tile([[0.0, -600.0]], (4, 1))}
    ev = Evaluator(g, data, None)
    _, maximal = ev.knob_space()
    ev.set_maximal_references(maximal)
    q0, _ = ev(maximal)
    ruin = dict(maximal)
    ruin[("softmax/1.2", "t")] = 0
    ruin[("softmax/1.2", "clamp")] = 0
    q, _ = ev(ruin)
    assert not q - q0 <= 10.0


def test_threshold_zero_keeps_maximal_when_every_step_hurts(block):
    fx, g = block
    deltas, maximal = first_decrement_deltas(g, fx.dataset)
    frozen = tuple(k for k, d in deltas.items() if not d > 0)
    assert set(deltas) - set(frozen)
    res = tune(g, None, TunerConfig(threshold=0.0, frozen=frozen), fx.dataset)
    assert res.assignment == maximal
    assert res.report["cost_after"] == res.report["cost_before"]
    assert all(not s["accepted"] for s in res.report["history"])


def test_threshold_zero_only_accepts_lossless_steps(block):
    fx, g = block
    res = tune(g, None, TunerConfig(threshold=0.0), fx.dataset)
    assert all(s["delta"] <= 0 for s in res.report["history"] if s["accepted"])
    assert res.report["final_delta"] <= 0


def test_unknown_frozen_knob(block):
    fx, g = block
    with pytest.raises(TunerError, match="not present"):
        tune(g, None, TunerConfig(frozen=("nope/1:t",)), fx.dataset)


@pytest.fixture(scope="module")
def tuned(block):
    fx, g = block
    return {s: tune(g, None, TunerConfig(strategy=s, threshold=0.01), fx.dataset)
            for s in ("greedy-linear", "hill-climbing")}


@pytest.mark.parametrize("strategy", ["greedy-linear", "hill-climbing"])
def test_feasible_and_cheaper(block, tuned, strategy):
    fx, g = block
    thr = 0.01
    res = tuned[strategy]
    rep = res.report
    assert rep["final_delta"] <= thr
    ev = Evaluator(g, fx.dataset, None)
    _, maximal = ev.knob_space()
    ev.set_maximal_references(maximal)
    q0, c0 = ev(maximal)
    q1, c1 = ev(res.assignment)
    assert q1 - q0 <= thr
    assert (c0, c1) == (rep["cost_before"], rep["cost_after"])
    if any(s["accepted"] for s in rep["history"]):
        assert c1 < c0
    assert all(s["delta"] <= thr for s in rep["history"] if s["accepted"])


def test_hill_climbing_steps_reduce_cost(tuned):
    rep = tuned["hill-climbing"].report
    costs = [rep["cost_before"]] + [s["cost"] for s in rep["history"]]
    assert all(a > b for a, b in zip(costs, costs[1:]))


def test_deterministic(block, tuned):
    fx, g = block
    a = tuned["greedy-linear"]
    b = tune(g, None, TunerConfig(threshold=0.01), fx.dataset)
    assert a.assignment == b.assignment
    assert a.report["history"] == b.report["history"]


def test_per_site_asymmetry(two):
    fx, g = two
    res = tune(g, None, TunerConfig(threshold=1e-3), fx.dataset)
    a, b = res.assignment[("softmax/2.2", "t")], res.assignment[("softmax/3.2", "t")]
    assert a != b
    assert a < b


def test_step_budget_warning(two):
    fx, g = two
    with pytest.warns(RuntimeWarning, match="budget"):
        res = tune(g, None, TunerConfig(strategy="hill-climbing", threshold=1e-2, max_steps=1), fx.dataset)
    assert res.report["warning"] == "step budget exhausted"
    assert len(res.report["history"]) == 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = tune(g, None, TunerConfig(threshold=1e-2), fx.dataset)
    assert res.report["warning"] is None


def test_monotone_thresholds():
    fx = fixtures.transformer_block(samples=256)
    g = fx.annotated()
    lo = tune(g, None, TunerConfig(threshold=0.5), fx.dataset).report["cost_after"]
    hi = tune(g, None, TunerConfig(threshold=2.0), fx.dataset).report["cost_after"]
    assert lo >= hi


def test_subsampling_caps_dataset(two):
    fx, g = two
    res = tune(g, None, TunerConfig(threshold=0.0, max_samples=16), fx.dataset)
    assert res.report["samples"] == 16


def test_labels_as_references(two):
    fx, g = two
    res = tune(g, None, TunerConfig(loss="error_rate", threshold=0.0), fx.dataset, references=fx.labels)
    assert res.report["references"] == "given"
    assert res.report["final_delta"] <= 0.0


def test_report_schema_and_files(tmp_path, two):
    fx, g = two
    res = tune(g, default_passes(), TunerConfig(threshold=1e-3), fx.dataset)
    rep = res.report
    assert {"strategy", "loss", "threshold", "baseline_quality", "final_quality", "cost_before",
            "cost_after", "knobs", "history"} <= set(rep)
    assert assignment_from_json(rep["knobs"]) == res.assignment
    assert assignment_to_json(res.assignment) == rep["knobs"]
    save_report(tmp_path / "r.json", rep)
    assert json.loads((tmp_path / "r.json").read_text())["knobs"] == rep["knobs"]
    assert {"site", "knob", "value", "quality", "delta", "cost", "accepted"} == set(rep["history"][0])
