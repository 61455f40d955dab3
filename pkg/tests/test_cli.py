"""End-to-end runs of the command line entry point.

Every run lands in a pytest temp directory; assertions cover exit codes,
artifact layout, and byte-level determinism of the JSON payloads (timestamps
live only in the .meta.json sidecars).
"""

import json
import os

import numpy as np
import pytest

from rwre_lab import cli


def run(args):
    return cli.main([str(a) for a in args])


def payload_bytes(out_dir, name):
    with open(os.path.join(out_dir, name), "rb") as handle:
        return handle.read()


def test_gen_env_artifacts_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["gen-env", "--seed", 7, "--out", a]) == 0
    assert run(["gen-env", "--seed", 7, "--out", b]) == 0
    for out in (a, b):
        names = sorted(os.listdir(out))
        assert "gen_env.json" in names
        assert "gen_env.meta.json" in names
        assert "environment.json" in names
        assert "environment_map.png" in names
        assert os.path.getsize(out / "environment_map.png") > 0
    assert payload_bytes(a, "gen_env.json") == payload_bytes(b, "gen_env.json")
    assert payload_bytes(a, "environment.json") == payload_bytes(b, "environment.json")
    meta = json.loads(payload_bytes(a, "gen_env.meta.json"))
    assert "written_at" in meta
    assert any(p.endswith("gen_env.json") for p in meta["artifacts"])


def test_payload_shape_and_hash_stability(tmp_path):
    out = tmp_path / "run"
    assert run(["gen-env", "--out", out]) == 0
    payload = json.loads(payload_bytes(out, "gen_env.json"))
    assert payload["command"] == "gen-env"
    assert "out" not in payload["config"]
    assert len(payload["config_hash"]) == 16
    assert payload["results"]["balanced"] is True
    assert payload["results"]["genuinely_d_dimensional"] is True
    assert payload["results"]["environment_file"] == "environment.json"


def test_unknown_config_key_is_exit_1(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"trails": 10}))
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "x"]) == 1


def test_malformed_env_spec_is_exit_1(tmp_path):
    cfg = tmp_path / "bad_env.json"
    cfg.write_text(json.dumps({"env": {"variant": "uniform-srw"}}))
    assert run(["gen-env", "--config", cfg, "--out", tmp_path / "x"]) == 1


def test_budget_overflow_is_exit_2(tmp_path):
    cfg = tmp_path / "huge.json"
    cfg.write_text(json.dumps({"N": 512}))
    assert run(["stationary", "--config", cfg, "--out", tmp_path / "x"]) == 2


def test_simulate_writes_trajectories(tmp_path):
    out = tmp_path / "sim"
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"trials": 3, "steps": 200}))
    assert run(["simulate", "--config", cfg, "--out", out]) == 0
    names = sorted(os.listdir(out))
    assert [n for n in names if n.startswith("trajectory_") and n.endswith(".csv")] == [
        "trajectory_000.csv",
        "trajectory_001.csv",
        "trajectory_002.csv",
    ]
    assert "paths.png" in names
    payload = json.loads(payload_bytes(out, "simulate.json"))
    assert payload["results"]["mean_square_displacement"] > 0


def test_tails_payload_contains_moments(tmp_path):
    out = tmp_path / "tails"
    cfg = tmp_path / "tails.json"
    cfg.write_text(json.dumps({"trials": 2000, "grid": [1, 2, 4], "powers": [1]}))
    assert run(["tails", "--config", cfg, "--out", out]) == 0
    payload = json.loads(payload_bytes(out, "tails.json"))
    surv = payload["results"]["survival"]["probabilities"]
    assert surv[0] == 1.0
    assert payload["results"]["moments"]["1"]["estimate"] > 2.0
    assert os.path.getsize(out / "survival.png") > 0


def test_stationary_pipeline_outputs(tmp_path):
    out = tmp_path / "stat"
    cfg = tmp_path / "stat.json"
    cfg.write_text(json.dumps({"N": 8, "mc_trials": 500}))
    assert run(["stationary", "--config", cfg, "--out", out]) == 0
    payload = json.loads(payload_bytes(out, "stationary.json"))
    res = payload["results"]
    assert res["conversion_residual"] < 1e-8
    assert res["stationary_residual"] < 1e-10
    assert res["holder_holds"] is True
    assert abs(res["monte_carlo"]["z_score"]) < 5.0
    assert os.path.getsize(out / "density_rescaled.png") > 0
    assert os.path.getsize(out / "density_converted.png") > 0


def test_mean_value_threads_do_not_change_payload(tmp_path):
    cfg = tmp_path / "mv.json"
    cfg.write_text(json.dumps({"n_solves": 4, "radius": 12.0}))
    one, two = tmp_path / "one", tmp_path / "two"
    assert run(["mean-value", "--config", cfg, "--out", one, "--threads", 1]) == 0
    assert run(["mean-value", "--config", cfg, "--out", two, "--threads", 4]) == 0
    assert payload_bytes(one, "mean_value.json") == payload_bytes(two, "mean_value.json")


def test_threads_env_var(monkeypatch):
    monkeypatch.setenv("RWRE_LAB_THREADS", "3")
    assert cli.resolve_threads(None) == 3
    assert cli.resolve_threads(2) == 2
    monkeypatch.setenv("RWRE_LAB_THREADS", "bogus")
    with pytest.raises(Exception):
        cli.resolve_threads(None)


def test_seed_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 5, "shape": [6, 6]}))
    out = tmp_path / "o"
    assert run(["gen-env", "--config", cfg, "--seed", 9, "--out", out]) == 0
    payload = json.loads(payload_bytes(out, "gen_env.json"))
    assert payload["config"]["seed"] == 9
    assert payload["config"]["shape"] == [6, 6]


def test_acceptance_subcommand_subset(tmp_path, capsys):
    out = tmp_path / "acc"
    cfg = tmp_path / "acc.json"
    cfg.write_text(json.dumps({"criteria": [3]}))
    assert run(["all", "--config", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "criterion 3" in text
    assert "pass" in text
    payload = json.loads(payload_bytes(out, "acceptance.json"))
    assert payload["results"]["all_passed"] is True
    assert payload["results"]["n_run"] == 1


def test_acceptance_failure_is_exit_3(tmp_path, capsys):
    """Master seed 108 drives the endpoint trace outside the +-0.02 gate."""
    out = tmp_path / "accfail"
    cfg = tmp_path / "accfail.json"
    cfg.write_text(json.dumps({"criteria": [1]}))
    assert run(["all", "--config", cfg, "--seed", 108, "--out", out]) == 3
    assert "FAIL" in capsys.readouterr().out
    payload = json.loads(payload_bytes(out, "acceptance.json"))
    assert payload["results"]["all_passed"] is False


def test_jsonable_handles_non_finite():
    blob = cli._jsonable({"a": float("nan"), "b": np.float64("inf"), "c": np.arange(3)})
    assert blob["a"] == "nan"
    assert blob["b"] == "inf"
    assert blob["c"] == [0, 1, 2]
    json.dumps(blob, allow_nan=False)
