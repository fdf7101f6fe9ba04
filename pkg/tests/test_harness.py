import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from proxdiff.cli import main as cli_main
from proxdiff.data_gen import node_stream
from proxdiff.errors import InvalidScenario
from proxdiff.harness import (
    check_prox,
    list_presets,
    load_scenario,
    run_experiment,
)

SRC = str(Path(__file__).resolve().parents[1] / "src")


def tiny_scenario(runs=2, iterations=3, seed=5, **extra):
    doc = {
        "name": "tiny",
        "kind": "lms",
        "topology": {"clusters": [[0], [1]], "edges": [[0, 1]]},
        "weights": "uniform",
        "model": {
            "m": 1,
            "sigma2_x": 1.0,
            "sigma2_z": 0.04,
            "optimum": {"base": [1.0], "stages": [{"start": 0, "deltas": [[0.0], [0.5]]}]},
        },
        "variants": [
            {"name": "lms", "family": "non_cooperative_lms", "mu": 0.1},
            {"name": "prox", "family": "proximal_diffusion", "mu": 0.1,
             "regularizer": {"kind": "l1", "eta": 0.05}},
        ],
        "iterations": iterations,
        "runs": runs,
        "seed": seed,
        "window": 2,
    }
    doc.update(extra)
    return doc


def test_presets_ship_expected_scenarios():
    names = set(list_presets())
    assert {"fig3", "fig5", "fig6", "spectrum"} <= names


def test_fig3_preset_published_settings():
    scen = load_scenario("fig3")
    assert scen.topology.n_nodes == 20
    assert scen.topology.cluster_sizes().tolist() == [10, 5, 5]
    assert scen.model_cfg["m"] == 18
    assert scen.runs == 200
    assert scen.iterations == 1500
    by_name = {v.name: v for v in scen.variants}
    assert set(by_name) == {"lms", "lms_l1", "lms_rw", "diffusion", "prox_l1", "prox_rw"}
    assert all(v.mu == 0.02 for v in scen.variants)
    assert by_name["prox_l1"].regularizer.eta == 0.06
    assert by_name["prox_rw"].regularizer.eta == 0.04
    assert by_name["prox_rw"].regularizer.epsilon == 0.1
    assert not by_name["prox_rw"].regularizer.adaptive_p
    stages = scen.model_cfg["optimum"]["stages"]
    assert [s["start"] for s in stages] == [0, 500, 1000]


def test_fig6_preset_enables_adaptive_rule():
    scen = load_scenario("fig6")
    by_name = {v.name: v for v in scen.variants}
    assert by_name["prox_rw"].regularizer.adaptive_p
    assert by_name["prox_rw"].regularizer.adaptive_p_scale == 1.0
    assert not by_name["diffusion"].regularizer.adaptive_p


def test_fig5_sweep_expands_to_grid():
    scen = load_scenario("fig5")
    names = [v.name for v in scen.variants]
    assert names[0] == "eta0"
    assert "l1:eta=0.06" in names
    assert "reweighted_l1:eta=0.14" in names
    # 7 nonzero etas x 2 kinds + baseline
    assert len(names) == 15


def test_malformed_cluster_errors_name_the_node():
    doc = tiny_scenario()
    doc["topology"]["clusters"] = [[0, 1], [1]]
    with pytest.raises(InvalidScenario, match="node 1"):
        load_scenario(doc)


def test_unknown_scenario_source():
    with pytest.raises(InvalidScenario, match="preset"):
        load_scenario("no_such_preset")


def test_single_step_matches_hand_computed_lms(tmp_path):
    doc = tiny_scenario(runs=1, iterations=1)
    doc["topology"] = {"clusters": [[0]], "edges": []}
    doc["model"]["optimum"] = {"base": [1.0], "stages": [{"start": 0, "deltas": [[0.0]]}]}
    doc["variants"] = [{"name": "lms", "family": "non_cooperative_lms", "mu": 0.1}]
    scen = load_scenario(doc)
    res = run_experiment(scen, out_dir=tmp_path, jobs=1)
    buf = node_stream(scen.seed, 0, 0).standard_normal(2)
    x = buf[0] * 1.0
    d = x * 1.0 + buf[1] * 0.2
    w1 = 0.1 * x * d
    expected = (w1 - 1.0) ** 2
    rows = [
        line.split(",")
        for line in res.paths["curves"].read_text().splitlines()[1:]
        if line.startswith("lms,network_msd")
    ]
    assert len(rows) == 1
    assert float(rows[0][5]) == pytest.approx(expected, rel=1e-12)


def test_byte_identical_outputs_same_seed(tmp_path):
    doc = tiny_scenario()
    a = run_experiment(load_scenario(doc), out_dir=tmp_path / "a", jobs=1)
    b = run_experiment(load_scenario(doc), out_dir=tmp_path / "b", jobs=1)
    for key in ("curves", "summary", "manifest"):
        assert a.paths[key].read_bytes() == b.paths[key].read_bytes()


def test_byte_identical_across_jobs(tmp_path):
    doc = tiny_scenario(runs=4)
    a = run_experiment(load_scenario(doc), out_dir=tmp_path / "j1", jobs=1)
    b = run_experiment(load_scenario(doc), out_dir=tmp_path / "j3", jobs=3)
    assert a.paths["curves"].read_bytes() == b.paths["curves"].read_bytes()
    assert a.paths["summary"].read_bytes() == b.paths["summary"].read_bytes()


def test_manifest_replay_reproduces_outputs(tmp_path):
    doc = tiny_scenario(runs=3)
    first = run_experiment(load_scenario(doc), out_dir=tmp_path / "one", jobs=1)
    replay = load_scenario(first.paths["manifest"])
    second = run_experiment(replay, out_dir=tmp_path / "two", jobs=1)
    assert first.paths["curves"].read_bytes() == second.paths["curves"].read_bytes()


def test_seed_changes_outputs(tmp_path):
    a = run_experiment(load_scenario(tiny_scenario(seed=5)), out_dir=tmp_path / "s5", jobs=1)
    b = run_experiment(load_scenario(tiny_scenario(seed=6)), out_dir=tmp_path / "s6", jobs=1)
    assert a.paths["curves"].read_bytes() != b.paths["curves"].read_bytes()


def test_summary_contains_stability_and_counts(tmp_path):
    res = run_experiment(load_scenario(tiny_scenario()), out_dir=tmp_path, jobs=1)
    summary = json.loads(res.paths["summary"].read_text())
    entry = summary["variants"]["prox"]
    assert entry["diverged_runs"] == 0
    assert entry["stability"]["bounds"] == [2.0, 2.0]
    assert entry["stability"]["ok"] == [True, True]
    assert 0 <= entry["max_shift_ratio"] <= 1 + 1e-9


def test_check_prox_report():
    report = check_prox(200, seed=3)
    assert report.passed
    assert report.max_deviation <= 1e-4
    assert report.max_objective_excess <= 1e-8
    with pytest.raises(InvalidScenario):
        check_prox(0)


def test_cli_run_and_exit_codes(tmp_path):
    doc_path = tmp_path / "tiny.json"
    doc_path.write_text(json.dumps(tiny_scenario()))
    code = cli_main(["run", str(doc_path), "--out", str(tmp_path / "out"), "--jobs", "1"])
    assert code == 0
    assert (tmp_path / "out" / "tiny_curves.csv").exists()
    assert cli_main(["check-prox", "--cases", "50"]) == 0
    assert cli_main(["list-presets"]) == 0
    assert cli_main(["run", "missing_preset"]) == 2


def test_cli_usage_error_on_zero_cases():
    with pytest.raises(SystemExit) as exc:
        cli_main(["check-prox", "--cases", "0"])
    assert exc.value.code == 2


def test_cli_subprocess_entrypoint():
    proc = subprocess.run(
        [sys.executable, "-m", "proxdiff", "list-presets"],
        capture_output=True, text=True, env={"PYTHONPATH": SRC, "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0
    assert "fig3" in proc.stdout


def test_env_var_sets_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("PROXDIFF_OUT", str(tmp_path / "envout"))
    res = run_experiment(load_scenario(tiny_scenario()), jobs=1)
    assert res.paths["curves"].parent == tmp_path / "envout"


def test_manifest_replay_honors_cli_overrides(tmp_path):
    doc = tiny_scenario(runs=5)
    first = run_experiment(
        load_scenario(doc, runs=2, seed=11), out_dir=tmp_path / "one", jobs=1
    )
    replay = load_scenario(first.paths["manifest"])
    assert replay.runs == 2 and replay.seed == 11
    second = run_experiment(replay, out_dir=tmp_path / "two", jobs=1)
    assert first.paths["curves"].read_bytes() == second.paths["curves"].read_bytes()


def test_explicit_weight_matrices_accepted():
    doc = tiny_scenario()
    doc["weights"] = {
        "c": [[1.0, 0.0], [0.0, 1.0]],
        "a": [[1.0, 0.0], [0.0, 1.0]],
        "rho": [[0.0, 2.0], [0.5, 0.0]],
    }
    scen = load_scenario(doc)
    assert scen.weights.p.tolist() == [[0.0, 1.25], [1.25, 0.0]]
    doc["weights"]["rho"] = [[0.3, 0.0], [0.0, 0.0]]  # support violation
    with pytest.raises(InvalidScenario, match="regularizer_support"):
        load_scenario(doc)


def test_fully_diverged_variant_flagged(tmp_path):
    doc = tiny_scenario(runs=2, iterations=1500)
    doc["variants"] = [{"name": "wild", "family": "non_cooperative_lms", "mu": 6.0}]
    res = run_experiment(load_scenario(doc), out_dir=tmp_path, jobs=1)
    assert res.any_fully_diverged
    assert res.curves["wild"] is None
    assert res.summary["variants"]["wild"]["fully_diverged"]
    statuses = [r["variants"]["wild"] for r in res.manifest["runs"]]
    assert all(s.startswith("diverged@") for s in statuses)
