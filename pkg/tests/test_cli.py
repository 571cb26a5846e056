import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mpcgraph.cli import (EXIT_COMPILE, EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_PROTOCOL, cmd_report, main,
                          report_table)
from mpcgraph.ir import Graph, GraphBuilder, Node, TensorMeta, serialize
from mpcgraph.tensorio import save_dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, doc, name="project.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def graph_project(tmp_path, build, annotation, inputs=None, **extra):
    b = GraphBuilder()
    build(b)
    (tmp_path / "g.json").write_text(serialize(b.build()))
    doc = {"graph": "g.json", "annotation": annotation, "out_dir": "out", **extra}
    if inputs is not None:
        save_dataset(tmp_path / "in", inputs)
        doc["inputs"] = "in"
    return write_config(tmp_path, doc)


def mlp_project(tmp_path, **extra):
    doc = json.loads((CONFIGS / "mlp.json").read_text())
    doc.update(out_dir=str(tmp_path / "out"), **extra)
    return write_config(tmp_path, doc)


def test_exit_codes_are_distinct():
    assert [EXIT_OK, EXIT_CONFIG, EXIT_COMPILE, EXIT_PROTOCOL, EXIT_MISMATCH] == [0, 1, 2, 3, 4]


def test_compile_mlp_writes_artifacts(tmp_path, capsys):
    assert main(["compile", "--config", mlp_project(tmp_path)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["typecheck"] == "ok"
    files = {p.name for p in (tmp_path / "out").iterdir()}
    assert {"program0.json", "program1.json", "cost.json", "graph.post.json", "ranges.json"} <= files


def test_unknown_pass_is_config_error(tmp_path, capsys):
    cfg = mlp_project(tmp_path, passes=["relu", "FooPass"])
    assert main(["compile", "--config", cfg]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "[config]" in err and "FooPass" in err


def test_missing_approximation_names_site(tmp_path, capsys):
    def build(b):
        x = b.input("x", [4])
        b.output(b.op("softmax", x, axis=-1))
    cfg = graph_project(tmp_path, build, {"secrets": {"x": [0]}}, passes=[])
    assert main(["compile", "--config", cfg]) == EXIT_COMPILE
    assert "[approx] no approximation for softmax at softmax/1" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    assert main(["compile", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["compile", "--config", write_config(tmp_path, {"fixture": "mlp", "bogus": 1})]) == EXIT_CONFIG
    assert main(["compile", "--config", write_config(tmp_path, {"graph": "nope.json"})]) == EXIT_CONFIG
    assert main(["compile"]) == EXIT_CONFIG
    assert main(["report"]) == EXIT_CONFIG
    assert main(["report", "--out-dir", str(tmp_path / "empty")]) == EXIT_CONFIG
    (tmp_path / "in.npz").write_bytes(b"")
    assert main(["compile", "--config", write_config(tmp_path, {"fixture": "mlp", "inputs": "in.npz"})]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.count("error [config]") == 6 and "not a dataset directory" in err and "error [report]" in err


def test_invalid_graph_names_node(tmp_path, capsys):
    m = lambda *s: TensorMeta(s)  # noqa: E731
    g = Graph([Node(0, "input", (), {"name": "x", "shape": [2, 3]}, m(2, 3)),
               Node(1, "input", (), {"name": "y", "shape": [4, 5]}, m(4, 5)),
               Node(2, "matmul", (0, 1), {}, m(2, 5))], [("x", 0), ("y", 1)], [2])
    (tmp_path / "g.json").write_text(serialize(g))
    cfg = write_config(tmp_path, {"graph": "g.json", "annotation": {"secrets": {"x": [0], "y": [1]}}})
    assert main(["compile", "--config", cfg]) == EXIT_COMPILE
    err = capsys.readouterr().err
    assert "[graph]" in err and "node 2 (matmul)" in err


def test_run_mlp_within_tolerance(tmp_path, capsys):
    assert main(["run", "--config", mlp_project(tmp_path)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["cost_matches_static"] is True
    assert out["max_abs_deviation"] <= 2 ** -8
    run = json.loads((tmp_path / "out" / "run.json").read_text())
    assert run["cost"]["bytes0"] == out["bytes"][0]


def test_run_tolerance_violation_exits_4(tmp_path, capsys):
    assert main(["run", "--config", mlp_project(tmp_path), "--tolerance", "0"]) == EXIT_MISMATCH
    assert "exceeds tolerance" in capsys.readouterr().err


def test_identity_round_trip(tmp_path, capsys):
    def build(b):
        b.output(b.input("x", [3]))
    x = np.array([1.5, -2.25, 0.0])
    cfg = graph_project(tmp_path, build, {"secrets": {"x": [0]}}, inputs={"x": x})
    assert main(["run", "--config", cfg, "--tolerance", str(2 ** -16)]) == EXIT_OK
    out = json.loads((tmp_path / "out" / "run.json").read_text())
    assert out["outputs"][0] == x.tolist()


def test_report_single_mul_is_all_mul(tmp_path, capsys):
    def build(b):
        b.output(b.op("mul", b.input("x", [8]), b.input("y", [8])))
    cfg = graph_project(tmp_path, build, {"secrets": {"x": [0], "y": [1]}})
    assert main(["compile", "--config", cfg]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", "--config", cfg]) == EXIT_OK
    table = json.loads((tmp_path / "out" / "report.json").read_text())
    assert table["mul"]["bytes_pct"] == 100.0 and table["mul"]["rounds_pct"] == 100.0
    assert "mul" in capsys.readouterr().out


def test_report_empty_program_is_empty(tmp_path):
    assert report_table({"table": {}}) == {}
    d = tmp_path / "r"
    d.mkdir()
    (d / "cost.json").write_text(json.dumps({"bytes0": 0, "bytes1": 0, "rounds": 0, "table": {}}))
    assert cmd_report(d)["table"] == {}


def test_softmax_fixture_dominated_by_comparison_and_mul(tmp_path):
    cfg = write_config(tmp_path, {"fixture": {"name": "transformer_block", "samples": 4}, "out_dir": "out"})
    assert main(["compile", "--config", cfg]) == EXIT_OK
    table = cmd_report(tmp_path / "out")["table"]
    top = sorted(table, key=lambda c: -table[c]["bytes_pct"])[:2]
    assert set(top) <= {"comparison", "mul", "linear"} and "mul" in top


def test_deterministic_artifacts(tmp_path):
    def go(sub):
        d = tmp_path / sub
        assert main(["run", "--config", mlp_project(tmp_path), "--out-dir", str(d), "--seed", "7"]) == EXIT_OK
        assert main(["report", "--out-dir", str(d)]) == EXIT_OK
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}
    a, b = go("a"), go("b")
    assert a == b and "transcript.json" in a and "report.json" in a


def test_seed_changes_transcript_not_outputs(tmp_path):
    cfg = mlp_project(tmp_path)
    for seed in ("1", "2"):
        assert main(["run", "--config", cfg, "--out-dir", str(tmp_path / seed), "--seed", seed]) == EXIT_OK
    r1, r2 = (json.loads((tmp_path / s / "run.json").read_text()) for s in ("1", "2"))
    assert r1["transcript_sha256"] != r2["transcript_sha256"]
    assert r1["cost"] == r2["cost"]


def test_tune_persists_knobs_for_compile(tmp_path, capsys):
    cfg = write_config(tmp_path, {"fixture": "two_softmax", "out_dir": "out",
                                  "tuner": {"threshold": 1e-3}})
    assert main(["tune", "--config", cfg]) == EXIT_OK
    knobs = json.loads((tmp_path / "out" / "knobs.json").read_text())
    report = json.loads((tmp_path / "out" / "tune_report.json").read_text())
    assert report["knobs"] == knobs
    assert main(["compile", "--config", cfg]) == EXIT_OK
    tuned_cost = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert [tuned_cost["bytes0"] + tuned_cost["bytes1"]] == [report["cost_after"]]
    (tmp_path / "out" / "knobs.json").unlink()
    assert main(["compile", "--config", cfg]) == EXIT_OK
    full = json.loads((tmp_path / "out" / "cost.json").read_text())
    assert full["bytes0"] + full["bytes1"] == report["cost_before"]


def test_tune_threshold_flag_and_validation(tmp_path, capsys):
    cfg = write_config(tmp_path, {"fixture": "two_softmax", "out_dir": "out"})
    assert main(["tune", "--config", cfg, "--threshold", "-1"]) == EXIT_CONFIG
    assert main(["tune", "--config", cfg, "--threshold", "0"]) == EXIT_OK
    report = json.loads((tmp_path / "out" / "tune_report.json").read_text())
    assert report["threshold"] == 0.0 and report["final_delta"] <= 0.0


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mpcgraph.cli", "compile", "--config", str(tmp_path / "x.json")],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_CONFIG and "error [config]" in res.stderr


@pytest.mark.parametrize("mode", ["off", "static", "recorded"])
def test_hummingbird_flag(tmp_path, mode, capsys):
    assert main(["compile", "--config", mlp_project(tmp_path), "--hummingbird", mode]) == EXIT_OK
    prog = json.loads((tmp_path / "out" / "program0.json").read_text())
    ws = {i["attrs"]["w"] for i in prog["instrs"] if i["op"] in ("ltz_mpc", "max_kernel")}
    if mode == "off":
        assert ws == {64}
    elif mode == "static":
        assert ws == {33}
    else:
        assert max(ws) < 33


def test_tensor_files_round_trip(tmp_path):
    from mpcgraph.tensorio import load_dataset, load_tensor
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([-0.5])}
    save_dataset(tmp_path / "d", arrays)
    back = load_dataset(tmp_path / "d")
    assert set(back) == {"a", "b"} and all(np.array_equal(back[k], arrays[k]) for k in arrays)
    (tmp_path / "t.csv").write_text("1,2,3\n")
    assert load_tensor(tmp_path / "t.csv").tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError, match="no .bin"):
        (tmp_path / "e").mkdir()
        load_dataset(tmp_path / "e")
