"""Command-line entry point.

Subcommands: scenario-validate, train, bench, replay. Every artifact-
producing run writes a manifest (resolved config, seed, artifact paths)
alongside its outputs. Exit codes: 0 success, 1 validation error,
2 runtime error, 3 IO error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .control import read_track_csv
from .errors import (DriftnavError, NonFiniteLoss, ScenarioParseError,
                     ScenarioValidationError)
from .evaluation import DEFAULT_RANGES, emit_report, run_benchmark
from .mdp import SamplerBounds
from .ppo import TrainConfig, load_checkpoint, train
from .scene import BUNDLED_SCENARIOS, load_bundled_scenario, load_scenario

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

OUTPUT_ROOT_ENV = "DRIFTNAV_OUTPUT_ROOT"


def _resolve_out(out: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out_dir: Path, command: str, config: dict, seed,
                    artifacts: list[Path]) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "seed": seed,
        "artifacts": [str(p) for p in artifacts],
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return path


def cmd_scenario_validate(args) -> int:
    path = Path(args.scenario)
    if not path.exists() and path.name not in BUNDLED_SCENARIOS:
        print(f"error: scenario file not found: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        scenario = load_scenario(path)
    except ScenarioValidationError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"{scenario.name}: OK "
          f"(length {scenario.road.length} m, {len(scenario.features)} feature "
          f"regions, {len(scenario.traffic)} traffic vehicles)")
    return EXIT_OK


def _load_train_config(args) -> TrainConfig:
    doc = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise FileNotFoundError(f"config file not found: {cfg_path}")
        doc = yaml.safe_load(cfg_path.read_text()) or {}
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown train config fields: {sorted(unknown)}")
    # flags win over config-file values
    for flag in ("seed", "total_steps", "learning_rate", "gamma"):
        value = getattr(args, flag, None)
        if value is not None:
            doc[flag] = value
    return TrainConfig(**doc)


def cmd_train(args) -> int:
    try:
        config = _load_train_config(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"invalid train config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = _resolve_out(args.out)
    ckpt_path = out_dir / "checkpoint.npz"
    metrics_path = out_dir / "metrics.csv"
    resume = None
    if args.resume:
        if not Path(args.resume).exists():
            print(f"error: checkpoint not found: {args.resume}", file=sys.stderr)
            return EXIT_IO
        resume = load_checkpoint(args.resume)

    bounds = SamplerBounds(n_max=config.n_max)
    if args.y_c_fixed is not None:
        bounds.y_c_norm_fixed = args.y_c_fixed
        bounds.traffic_presence_prob = 0.0

    def log(row):
        print("update {update:4d} step {step:7d} reward {mean_episode_reward:8.3f} "
              "entropy {entropy:6.3f} clip {clip_fraction:5.3f}".format(**row))

    try:
        train(config, bounds=bounds, metrics_path=metrics_path,
              checkpoint_path=ckpt_path, resume=resume,
              log_fn=log if not args.quiet else None)
    except NonFiniteLoss as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    _write_manifest(out_dir, "train", config.as_dict(), config.seed,
                    [ckpt_path, metrics_path])
    print(f"checkpoint written to {ckpt_path}")
    return EXIT_OK


def _load_scenarios(spec: str):
    if spec == "bundled":
        return [load_bundled_scenario(name) for name in BUNDLED_SCENARIOS]
    path = Path(spec)
    if path.is_dir():
        files = sorted(path.glob("*.yaml"))
        if not files:
            raise FileNotFoundError(f"no *.yaml scenarios in {path}")
        return [load_scenario(f) for f in files]
    return [load_scenario(name.strip()) for name in spec.split(",")]


def cmd_bench(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        print(f"error: checkpoint not found: {ckpt_path}", file=sys.stderr)
        return EXIT_IO
    try:
        checkpoint = load_checkpoint(ckpt_path)
        scenarios = _load_scenarios(args.scenarios)
        ranges = [float(r) for r in args.ranges.split(",")]
        seeds = list(range(args.seed, args.seed + args.seeds))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DriftnavError, ValueError) as exc:
        print(f"invalid benchmark setup: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = _resolve_out(args.out)

    def progress(i, total, row):
        if not args.quiet:
            print(f"[{i}/{total}] {row.scenario} {row.arm} range {row.lidar_range}"
                  f" seed {row.seed}: avg drift {row.average_drift:.3f}")

    table = run_benchmark(scenarios, checkpoint, seeds=seeds, ranges=ranges,
                          jobs=args.jobs, unroll_depth=args.unroll,
                          progress_fn=progress)
    config_echo = {
        "checkpoint": str(ckpt_path), "scenarios": args.scenarios,
        "ranges": ranges, "seeds": seeds, "jobs": args.jobs,
        "unroll": args.unroll,
    }
    paths = emit_report(table, out_dir, config_echo=config_echo)
    _write_manifest(out_dir, "bench", config_echo, args.seed,
                    list(paths.values()))
    if table.rows and all(np.isnan(r.average_drift) for r in table.rows):
        print("warning: every run failed before producing metrics",
              file=sys.stderr)
    print(f"benchmark written to {out_dir}")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.log)
    if not path.exists():
        print(f"error: log file not found: {path}", file=sys.stderr)
        return EXIT_IO
    try:
        rows = read_track_csv(path)
    except ValueError as exc:
        print(f"invalid trajectory log: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if not rows:
        print("empty trajectory log: no steps to replay")
        return EXIT_OK
    drifts = []
    for row in rows:
        drift = float(np.hypot(row.pose_gt.x - row.pose_ctrl.x,
                               row.pose_gt.y - row.pose_ctrl.y))
        drifts.append(drift)
        line = (f"t={row.t:8.2f}  gt=({row.pose_gt.x:8.2f},{row.pose_gt.y:7.2f})"
                f"  drift={drift:7.3f}  steer={row.steer:6.3f}"
                f"  speed={row.speed:5.2f}")
        if row.event:
            line += f"  event={row.event}"
        print(line)
    print(f"steps: {len(rows)}  average drift: {float(np.mean(drifts)):.4f}"
          f"  final drift: {drifts[-1]:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftnav",
        description="Drift-minimizing active navigation: train, benchmark, "
                    "and inspect runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario-validate", help="check a scenario file")
    p.add_argument("--scenario", required=True, help="scenario file path")
    p.set_defaults(fn=cmd_scenario_validate)

    p = sub.add_parser("train", help="train the waypoint policy")
    p.add_argument("--config", help="train config YAML (flags override)")
    p.add_argument("--out", default="train_out")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--total-steps", dest="total_steps", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float,
                   default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--y-c-fixed", dest="y_c_fixed", type=float, default=None,
                   help="curriculum: pin the feature-centroid observation")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bench", help="run the benchmark matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenarios", default="bundled",
                   help="'bundled', a directory of scenario YAMLs, or a "
                        "comma-separated list of files")
    p.add_argument("--scenario", dest="scenarios",
                   help="single scenario file (alias for --scenarios)")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--ranges", default=",".join(str(r) for r in DEFAULT_RANGES))
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--unroll", type=int, default=5)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("replay", help="print a logged run step by step")
    p.add_argument("log", help="executed-trajectory CSV")
    p.set_defaults(fn=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DriftnavError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
