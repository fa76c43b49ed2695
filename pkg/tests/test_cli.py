"""CLI contracts: artifacts, precedence, determinism, comparison."""

import json

import pytest
import yaml

from conftest import build_full_coverage_memory
from subgoal_hrl.cli import main
from subgoal_hrl.memory import save_transitions_jsonl
from subgoal_hrl.trainer import metrics_from_csv


def train_args(tmp_path, mode="unified_hrl", seed=3, **extra):
    args = [
        "train",
        "--mode", mode,
        "--seed", str(seed),
        "--steps", "1500",
        "--warmup-steps", "200",
        "--discovery-period", "500",
        "--out", str(tmp_path),
    ]
    for key, value in extra.items():
        args += [f"--{key.replace('_', '-')}", str(value)]
    return args


def test_train_writes_artifacts_and_manifest(tmp_path, capsys):
    assert main(train_args(tmp_path)) == 0
    run_dir = tmp_path / "unified_hrl_seed3"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["mode"] == "unified_hrl"
    # Every declared artifact exists and parses.
    for name in manifest["artifacts"].values():
        path = run_dir / name
        assert path.exists()
        if name.endswith(".json"):
            json.loads(path.read_text())
        elif name == "metrics.csv":
            assert metrics_from_csv(path.read_text())
    assert "subgoals" in manifest["artifacts"]
    assert "controller_table" in manifest["artifacts"]
    out = capsys.readouterr().out
    assert "unified_hrl seed=3" in out


def test_out_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SUBGOAL_HRL_OUT", str(tmp_path / "envroot"))
    args = train_args(tmp_path, mode="random_walk", seed=0)
    del args[args.index("--out"):]  # no --out flag: env var decides
    assert main(args) == 0
    assert (tmp_path / "envroot" / "random_walk_seed0" / "manifest.json").exists()


def test_train_missing_mode_fails(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 1
    assert "mode" in capsys.readouterr().err


def test_train_missing_subcommand_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_train_invalid_config_rejected(tmp_path, capsys):
    args = train_args(tmp_path)
    args[args.index("--steps") + 1] = "100"  # steps <= warmup
    assert main(args) == 1
    assert "error" in capsys.readouterr().err


def test_flag_overrides_config_file(tmp_path):
    config = {
        "mode": "random_walk",
        "seed": 9,
        "total_steps": 700,
        "warmup_steps": 100,
    }
    cfg_path = tmp_path / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    assert main([
        "train", "--config", str(cfg_path), "--steps", "900",
        "--out", str(tmp_path),
    ]) == 0
    manifest = json.loads(
        (tmp_path / "random_walk_seed9" / "manifest.json").read_text()
    )
    assert manifest["config"]["total_steps"] == 900  # flag wins
    assert manifest["config"]["warmup_steps"] == 100  # file value kept


def test_config_experiments_matrix(tmp_path):
    config = {
        "total_steps": 600,
        "warmup_steps": 50,
        "experiments": [
            {"mode": "random_walk", "seeds": [0, 1]},
        ],
    }
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text(yaml.safe_dump(config))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "random_walk_seed0" / "manifest.json").exists()
    assert (tmp_path / "random_walk_seed1" / "manifest.json").exists()


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg_path = tmp_path / "bad.yaml"
    cfg_path.write_text(yaml.safe_dump({"mode": "random_walk", "bogus": 1}))
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_train_reproduces_from_manifest(tmp_path):
    assert main(train_args(tmp_path / "a")) == 0
    manifest_path = tmp_path / "a" / "unified_hrl_seed3" / "manifest.json"
    assert main([
        "train", "--config", str(manifest_path), "--out", str(tmp_path / "b"),
    ]) == 0
    metrics_a = (tmp_path / "a" / "unified_hrl_seed3" / "metrics.csv").read_bytes()
    metrics_b = (tmp_path / "b" / "unified_hrl_seed3" / "metrics.csv").read_bytes()
    assert metrics_a == metrics_b


def test_discover_on_full_coverage_memory(tmp_path, env, capsys):
    memory_path = tmp_path / "memory.jsonl"
    save_transitions_jsonl(memory_path, build_full_coverage_memory(env))
    out_path = tmp_path / "subgoals.json"
    assert main([
        "discover", "--memory", str(memory_path), "--k", "4",
        "--seed", "0", "--out", str(out_path),
    ]) == 0
    blob = json.loads(out_path.read_text())
    assert blob["size"] == 6
    assert blob["k"] == 4
    assert len(blob["anomalies"]) == 2

    out8 = tmp_path / "subgoals8.json"
    assert main([
        "discover", "--memory", str(memory_path), "--k", "8",
        "--seed", "0", "--out", str(out8),
    ]) == 0
    assert json.loads(out8.read_text())["size"] == 10


def test_discover_empty_memory_fails(tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["discover", "--memory", str(empty)]) == 1
    assert "no transitions" in capsys.readouterr().err


def test_discover_missing_and_oversized_memory(tmp_path, env, capsys):
    assert main(["discover", "--memory", str(tmp_path / "nope.jsonl")]) == 1
    memory_path = tmp_path / "memory.jsonl"
    save_transitions_jsonl(memory_path, build_full_coverage_memory(env))
    assert main([
        "discover", "--memory", str(memory_path), "--max-bytes", "10",
    ]) == 1
    assert "exceeds" in capsys.readouterr().err


def test_discover_requires_memory_flag():
    with pytest.raises(SystemExit) as exc:
        main(["discover"])
    assert exc.value.code == 2


def test_compare_merges_runs(tmp_path, capsys):
    for seed in (0, 1):
        assert main(train_args(tmp_path, mode="random_walk", seed=seed)) == 0
    assert main(train_args(tmp_path, mode="flat_q", seed=0)) == 0
    cmp_dir = tmp_path / "cmp"
    assert main([
        "compare", "--root", str(tmp_path), "--grid-step", "300",
        "--out-dir", str(cmp_dir),
    ]) == 0
    coverage_csv = (cmp_dir / "coverage.csv").read_text()
    return_csv = (cmp_dir / "return.csv").read_text()
    header = coverage_csv.splitlines()[0]
    assert header == (
        "step,flat_q_mean,flat_q_std,random_walk_mean,random_walk_std"
    )
    assert return_csv.splitlines()[0] == header
    steps = [int(line.split(",")[0]) for line in coverage_csv.splitlines()[1:]]
    assert steps == list(range(300, 1501, 300))

    # Byte-identical on re-run.
    cmp2 = tmp_path / "cmp2"
    assert main([
        "compare", "--root", str(tmp_path), "--grid-step", "300",
        "--out-dir", str(cmp2),
    ]) == 0
    assert (cmp2 / "coverage.csv").read_bytes() == coverage_csv.encode()


def test_compare_duplicate_runs_zero_std(tmp_path):
    assert main(train_args(tmp_path / "x", mode="random_walk", seed=5)) == 0
    assert main(train_args(tmp_path / "y", mode="random_walk", seed=5)) == 0
    cmp_dir = tmp_path / "cmp"
    assert main([
        "compare",
        "--runs", str(tmp_path / "x" / "random_walk_seed5"),
        str(tmp_path / "y" / "random_walk_seed5"),
        "--grid-step", "500", "--out-dir", str(cmp_dir),
    ]) == 0
    for line in (cmp_dir / "coverage.csv").read_text().splitlines()[1:]:
        assert line.split(",")[2] == "0.0"


def test_compare_needs_two_runs(tmp_path, capsys):
    assert main(train_args(tmp_path, mode="random_walk", seed=0)) == 0
    assert main([
        "compare", "--runs", str(tmp_path / "random_walk_seed0"),
        "--out-dir", str(tmp_path / "cmp"),
    ]) == 1
    assert "at least 2" in capsys.readouterr().err


def test_eval_reports_greedy_rollout(tmp_path, capsys):
    assert main(train_args(tmp_path, seed=1)) == 0
    capsys.readouterr()
    assert main([
        "eval", "--run", str(tmp_path / "unified_hrl_seed1"), "--episodes", "2",
    ]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mode"] == "unified_hrl"
    assert len(report["episodes"]) == 2
    episode = report["episodes"][0]
    assert {"return", "steps", "terminal", "subgoal_path"} <= set(episode)
    assert isinstance(episode["subgoal_path"], list)


def test_eval_flat_run(tmp_path, capsys):
    assert main(train_args(tmp_path, mode="flat_q", seed=2)) == 0
    capsys.readouterr()
    assert main(["eval", "--run", str(tmp_path / "flat_q_seed2")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["episodes"][0]["subgoal_path"] == []


def test_eval_random_walk_rejected(tmp_path, capsys):
    assert main(train_args(tmp_path, mode="random_walk", seed=0)) == 0
    assert main(["eval", "--run", str(tmp_path / "random_walk_seed0")]) == 1
    assert "no tables" in capsys.readouterr().err


def test_eval_missing_run_rejected(tmp_path, capsys):
    assert main(["eval", "--run", str(tmp_path / "missing")]) == 1
    assert "manifest" in capsys.readouterr().err.lower()
