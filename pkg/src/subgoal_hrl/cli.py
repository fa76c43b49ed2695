"""Command-line front end: train runs, offline discovery, run comparison,
and greedy evaluation of saved tables.

Artifacts land in one directory per run. A run directory is complete
once manifest.json exists; the manifest lists every artifact file and
the fully resolved configuration, so `train --config manifest.json`
reproduces the run exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from pathlib import Path

import numpy as np
import yaml

from .agent import ControllerTable, FlatTable, MetaTable, StateIndex
from .discovery import SubgoalSet, discover
from .memory import load_transitions_jsonl, save_transitions_jsonl
from .trainer import (
    MODES,
    MetricsRecord,
    RunConfig,
    RunResult,
    greedy_rollout,
    metrics_from_csv,
    metrics_to_csv,
    moving_average,
    run,
)

OUT_ROOT_ENV = "SUBGOAL_HRL_OUT"
DEFAULT_OUT_ROOT = "runs"
MAX_MEMORY_FILE_BYTES = 256 * 1024 * 1024
MANIFEST_NAME = "manifest.json"


class CliError(Exception):
    """User-facing CLI failure; message printed to stderr, exit code 1."""


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ROOT_ENV, DEFAULT_OUT_ROOT))


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise CliError(f"cannot parse config file: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise CliError("config file must contain a mapping")
    # A run manifest doubles as a config file.
    if "config" in loaded and isinstance(loaded["config"], dict):
        return loaded["config"]
    return loaded


def _build_configs(args) -> list[RunConfig]:
    file_values: dict = {}
    experiments: list[dict] = []
    if args.config:
        raw = _load_config_file(args.config)
        experiments = raw.pop("experiments", []) or []
        unknown = set(raw) - set(RunConfig.field_names()) - {"out_root"}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        raw.pop("out_root", None)
        file_values = raw

    flag_overrides = {
        name: getattr(args, name)
        for name in (
            "mode",
            "seed",
            "total_steps",
            "k",
            "theta_anom",
            "warmup_steps",
            "discovery_period",
            "subgoal_timeout",
            "episode_cap",
            "alpha",
            "gamma",
            "batch_size",
            "slip_prob",
        )
        if getattr(args, name, None) is not None
    }

    base = dict(file_values)
    base.update(flag_overrides)
    if experiments and not flag_overrides.get("mode"):
        configs = []
        for entry in experiments:
            if "mode" not in entry or "seeds" not in entry:
                raise CliError("each experiment needs 'mode' and 'seeds'")
            for seed in entry["seeds"]:
                values = dict(base)
                values["mode"] = entry["mode"]
                values["seed"] = int(seed)
                configs.append(_make_config(values))
        return configs
    if "mode" not in base:
        raise CliError("no mode given: pass --mode or a config with experiments")
    return [_make_config(base)]


def _make_config(values: dict) -> RunConfig:
    try:
        cfg = RunConfig(**values)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from exc
    return cfg


def run_dir_name(config: RunConfig) -> str:
    return f"{config.mode}_seed{config.seed}"


def write_run_artifacts(result: RunResult, run_dir: Path) -> dict:
    """Write all artifacts; the manifest goes last and marks completion."""
    run_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, str] = {}

    (run_dir / "metrics.csv").write_text(metrics_to_csv(result.metrics))
    artifacts["metrics"] = "metrics.csv"

    save_transitions_jsonl(run_dir / "memory.jsonl", result.memory)
    artifacts["memory"] = "memory.jsonl"

    if result.subgoals is not None:
        (run_dir / "subgoals.json").write_text(
            json.dumps(result.subgoals.to_json_dict(), indent=2, sort_keys=True)
        )
        artifacts["subgoals"] = "subgoals.json"
    if result.controller is not None:
        result.controller.to_csv(run_dir / "controller_q.csv")
        artifacts["controller_table"] = "controller_q.csv"
    if result.meta is not None:
        result.meta.to_csv(run_dir / "meta_q.csv")
        artifacts["meta_table"] = "meta_q.csv"
    if result.flat is not None:
        result.flat.to_csv(run_dir / "flat_q.csv")
        artifacts["flat_table"] = "flat_q.csv"

    manifest = {
        "schema": 1,
        "status": "complete",
        "mode": result.config.mode,
        "seed": result.config.seed,
        "config": {
            name: getattr(result.config, name)
            for name in RunConfig.field_names()
        },
        "artifacts": artifacts,
        "final": {
            "steps": result.steps,
            "episodes": len(result.metrics),
            "coverage": result.final_coverage,
            "num_subgoals": result.subgoals.size if result.subgoals else 0,
            "discovery_steps": list(result.discovery_steps),
        },
    }
    (run_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True)
    )
    return manifest


def cmd_train(args) -> int:
    configs = _build_configs(args)
    out_root = _out_root(args)
    for config in configs:
        result = run(config)
        run_dir = out_root / run_dir_name(config)
        write_run_artifacts(result, run_dir)
        last_return = result.metrics[-1].ep_return if result.metrics else 0.0
        print(
            f"{config.mode} seed={config.seed}: steps={result.steps} "
            f"episodes={len(result.metrics)} coverage={result.final_coverage:.4f} "
            f"last_return={last_return:.1f} -> {run_dir}"
        )
    return 0


def cmd_discover(args) -> int:
    path = Path(args.memory)
    if not path.exists():
        raise CliError(f"memory file not found: {path}")
    if path.stat().st_size > args.max_bytes:
        raise CliError(
            f"memory file exceeds {args.max_bytes} bytes; refusing to load"
        )
    try:
        transitions = load_transitions_jsonl(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load memory: {exc}") from exc
    if not transitions:
        raise CliError("memory file contains no transitions")
    rng = np.random.default_rng(args.seed)
    try:
        subgoals = discover(
            transitions, args.k, args.theta_anom, rng,
            min_samples=args.min_samples,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(subgoals.to_json_dict(), indent=2, sort_keys=True))
    print(
        f"discovered {subgoals.size} subgoals "
        f"({subgoals.k} centroids, {len(subgoals.anomalies)} anomalies) -> {out}"
    )
    return 0


def _load_run_dirs(args) -> list[Path]:
    dirs: list[Path] = []
    if args.runs:
        dirs = [Path(d) for d in args.runs]
    elif args.root:
        dirs = sorted(
            p.parent for p in Path(args.root).glob(f"*/{MANIFEST_NAME}")
        )
    for d in dirs:
        if not (d / MANIFEST_NAME).exists():
            raise CliError(f"{d} is not a completed run (no {MANIFEST_NAME})")
    if len(dirs) < 2:
        raise CliError("comparison needs at least 2 completed run directories")
    return dirs


def _sample_at(steps: list[int], values: list[float], grid: list[int]) -> list[float]:
    """Previous-value resampling onto the grid (first value carried back)."""
    out = []
    j = -1
    for t in grid:
        while j + 1 < len(steps) and steps[j + 1] <= t:
            j += 1
        out.append(values[max(j, 0)])
    return out


def cmd_compare(args) -> int:
    run_dirs = _load_run_dirs(args)
    by_mode: dict[str, list[list[MetricsRecord]]] = {}
    final_steps = []
    for d in run_dirs:
        manifest = json.loads((d / MANIFEST_NAME).read_text())
        records = metrics_from_csv((d / "metrics.csv").read_text())
        if not records:
            raise CliError(f"{d} has no metrics rows")
        by_mode.setdefault(manifest["mode"], []).append(records)
        final_steps.append(records[-1].steps)

    grid_step = args.grid_step
    end = min(final_steps)
    if end < grid_step:
        raise CliError("runs are too short for the requested grid step")
    grid = list(range(grid_step, end + 1, grid_step))

    modes = sorted(by_mode)
    cov_series: dict[str, list[list[float]]] = {m: [] for m in modes}
    ret_series: dict[str, list[list[float]]] = {m: [] for m in modes}
    for mode in modes:
        for records in by_mode[mode]:
            steps = [r.steps for r in records]
            cov_series[mode].append(
                _sample_at(steps, [r.coverage for r in records], grid)
            )
            smoothed = moving_average([r.ep_return for r in records], args.window)
            ret_series[mode].append(_sample_at(steps, smoothed, grid))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, series in (("coverage.csv", cov_series), ("return.csv", ret_series)):
        header = ["step"]
        for mode in modes:
            header += [f"{mode}_mean", f"{mode}_std"]
        lines = [",".join(header)]
        for i, t in enumerate(grid):
            row = [str(t)]
            for mode in modes:
                column = [s[i] for s in series[mode]]
                mean = statistics.fmean(column)
                std = statistics.pstdev(column) if len(column) > 1 else 0.0
                row += [repr(mean), repr(std)]
            lines.append(",".join(row))
        (out_dir / name).write_text("\n".join(lines) + "\n")
    print(f"wrote {out_dir / 'coverage.csv'} and {out_dir / 'return.csv'}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise CliError(f"{run_dir} is not a completed run (no {MANIFEST_NAME})")
    manifest = json.loads(manifest_path.read_text())
    config = _make_config(manifest["config"])
    if config.mode == "random_walk":
        raise CliError("random_walk runs have no tables to evaluate")
    index = StateIndex(config.layout())
    artifacts = manifest["artifacts"]
    rng = np.random.default_rng(args.seed)

    kwargs: dict = {}
    if config.mode == "flat_q":
        kwargs["flat"] = FlatTable.from_csv(run_dir / artifacts["flat_table"], index)
    else:
        kwargs["controller"] = ControllerTable.from_csv(
            run_dir / artifacts["controller_table"], index
        )
        kwargs["meta"] = MetaTable.from_csv(run_dir / artifacts["meta_table"], index)
        if "subgoals" not in artifacts:
            raise CliError("run finished without a discovered subgoal set")
        kwargs["subgoals"] = SubgoalSet.from_json_dict(
            json.loads((run_dir / artifacts["subgoals"]).read_text())
        )

    episodes = []
    for _ in range(args.episodes):
        episodes.append(greedy_rollout(config, rng=rng, **kwargs))
    report = {
        "mode": config.mode,
        "seed": config.seed,
        "episodes": episodes,
        "mean_return": statistics.fmean(e["return"] for e in episodes),
    }
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subgoal-hrl",
        description=(
            "Hierarchical Q-learning with unsupervised subgoal discovery "
            "on a four-rooms key/lock gridworld."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one or more training runs")
    p_train.add_argument("--mode", choices=MODES)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--steps", dest="total_steps", type=int)
    p_train.add_argument("--k", type=int)
    p_train.add_argument("--theta-anom", dest="theta_anom", type=float)
    p_train.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p_train.add_argument("--discovery-period", dest="discovery_period", type=int)
    p_train.add_argument("--subgoal-timeout", dest="subgoal_timeout", type=int)
    p_train.add_argument("--episode-cap", dest="episode_cap", type=int)
    p_train.add_argument("--alpha", type=float)
    p_train.add_argument("--gamma", type=float)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--slip-prob", dest="slip_prob", type=float)
    p_train.add_argument("--config", help="YAML config or a run manifest.json")
    p_train.add_argument("--out", help=f"output root (default ${OUT_ROOT_ENV} or ./{DEFAULT_OUT_ROOT})")
    p_train.set_defaults(func=cmd_train)

    p_disc = sub.add_parser("discover", help="offline subgoal discovery on a memory snapshot")
    p_disc.add_argument("--memory", required=True, help="transitions JSONL file")
    p_disc.add_argument("--k", type=int, default=4)
    p_disc.add_argument("--theta-anom", dest="theta_anom", type=float, default=3.0)
    p_disc.add_argument("--seed", type=int, default=0)
    p_disc.add_argument("--min-samples", dest="min_samples", type=int, default=2)
    p_disc.add_argument("--max-bytes", dest="max_bytes", type=int,
                        default=MAX_MEMORY_FILE_BYTES)
    p_disc.add_argument("--out", default="subgoals.json")
    p_disc.set_defaults(func=cmd_discover)

    p_cmp = sub.add_parser("compare", help="merge metrics across runs per mode")
    p_cmp.add_argument("--runs", nargs="*", help="run directories")
    p_cmp.add_argument("--root", help="scan this directory for completed runs")
    p_cmp.add_argument("--grid-step", dest="grid_step", type=int, default=1000)
    p_cmp.add_argument("--window", type=int, default=100,
                       help="episodes in the return moving average")
    p_cmp.add_argument("--out-dir", dest="out_dir", default="comparison")
    p_cmp.set_defaults(func=cmd_compare)

    p_eval = sub.add_parser("eval", help="greedy rollout from saved tables")
    p_eval.add_argument("--run", required=True, help="completed run directory")
    p_eval.add_argument("--episodes", type=int, default=1)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
