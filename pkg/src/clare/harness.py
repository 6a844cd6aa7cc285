"""Command-line entry point and run orchestration.

``clare`` runs one of three modes over MNIST-format files or the built-in
toy blobs: the incremental learner itself (``clare``), the all-classes-at-
once upper bound (``joint``), and the no-replay lower bound (``finetune``).
Results go to stdout as a small table and, with ``--out``, to a diffable
text report (plus ``--csv`` for a flat accuracy table).

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error (including a missing data directory).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import fields, replace

import numpy as np

from .config import ENV_DATA_DIR, ExperimentConfig, config_from_items
from .dataio import LabeledDataset, load_mnist, make_toy_dataset, write_idx
from .metrics import average_over_tasks, evaluate  # re-exported surface
from .protocol import (
    MetricsRecord,
    build_schedule,
    run_experiment,
    run_finetune_baseline,
    run_joint_baseline,
)
from .report import ResultsReport, RunResult, write_csv, write_report

__all__ = [
    "ExperimentConfig",
    "average_over_tasks",
    "evaluate",
    "main",
    "run_cli",
]

MODES = ("clare", "joint", "finetune")


class UsageError(ValueError):
    """A problem the user can fix on the command line; exits with code 2."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clare",
        description="Class-incremental learning with generative replay.",
    )
    parser.add_argument("--mode", choices=MODES, default="clare")
    parser.add_argument("--dataset", choices=("mnist", "toy"), default=None)
    parser.add_argument("--data-dir", default=None,
                        help=f"directory with the four IDX files (default: ${ENV_DATA_DIR})")
    parser.add_argument("--g", type=int, default=None, help="classes per increment")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch", type=int, default=None, dest="batch_size")
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--latent-dim", type=int, default=None, dest="d_z")
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--replay", choices=("on", "off"), default=None)
    parser.add_argument("--start", choices=("scratch", "warm"), default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--seeds", default=None,
                        help="comma-separated seeds; runs once per seed")
    parser.add_argument("--out", default=None, dest="out_path",
                        help="write the results report here")
    parser.add_argument("--csv", default=None,
                        help="write a flat per-class accuracy CSV here")
    parser.add_argument("--dump-replay", default=None,
                        help="directory for per-increment replay buffers as IDX files")
    parser.add_argument("--config", default=None,
                        help="key = value file with defaults; flags override it")
    parser.add_argument("--toy-classes", type=int, default=None, dest="toy_classes")
    parser.add_argument("--toy-per-class", type=int, default=None, dest="toy_per_class")
    parser.add_argument("--toy-dim", type=int, default=None, dest="toy_dim")
    parser.add_argument("--toy-spread", type=float, default=None, dest="toy_spread")
    return parser


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; blanks and ``#`` comments are skipped."""
    items: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
                key, value = stripped.split("=", 1)
                items[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return items


def merge_config(args: argparse.Namespace) -> ExperimentConfig:
    """Layer the effective config: defaults, then config file, then flags."""
    if args.config:
        try:
            config = config_from_items(read_config_file(args.config))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        config = ExperimentConfig()
    overrides = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if args.replay is not None:
        overrides["replay"] = args.replay == "on"
    try:
        config = replace(config, **overrides)
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return config


def _parse_seeds(args: argparse.Namespace, config: ExperimentConfig) -> list[int]:
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --seeds value {args.seeds!r}") from exc
        if not seeds:
            raise UsageError("--seeds names no seeds")
        return seeds
    return [config.seed]


def load_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Materialize the train/test pair the config describes."""
    if config.dataset == "mnist":
        data_dir = config.data_dir or os.environ.get(ENV_DATA_DIR, "")
        if not data_dir:
            raise UsageError(
                f"mnist needs --data-dir or ${ENV_DATA_DIR} pointing at the IDX files"
            )
        if not os.path.isdir(data_dir):
            raise UsageError(f"data directory does not exist: {data_dir}")
        try:
            return load_mnist(data_dir)
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
    train_ss, test_ss = np.random.SeedSequence([config.seed, 0xD474]).spawn(2)
    train = make_toy_dataset(
        config.toy_classes,
        config.toy_per_class,
        dim=config.toy_dim,
        spread=config.toy_spread,
        seed=train_ss,
    )
    test = make_toy_dataset(
        config.toy_classes,
        max(50, config.toy_per_class // 2),
        dim=config.toy_dim,
        spread=config.toy_spread,
        seed=test_ss,
    )
    return train, test


def _replay_dumper(directory: str, dim: int, seed: int):
    """Writer for --dump-replay: images and labels as IDX, one pair per phase."""
    os.makedirs(directory, exist_ok=True)
    side = int(round(dim**0.5))
    square = side * side == dim

    def dump(phase: int, buffer) -> None:
        pixels = np.clip(np.round(buffer.images * 255.0), 0, 255).astype(np.uint8)
        if square:
            pixels = pixels.reshape(-1, side, side)
        stem = os.path.join(directory, f"replay-s{seed}-{phase:02d}")
        with open(f"{stem}-images-idx", "wb") as fh:
            fh.write(write_idx(pixels))
        with open(f"{stem}-labels-idx", "wb") as fh:
            fh.write(write_idx(buffer.labels.astype(np.uint8)))

    return dump


def run_mode(
    mode: str,
    train: LabeledDataset,
    test: LabeledDataset,
    config: ExperimentConfig,
    seed: int,
    on_replay=None,
) -> list[MetricsRecord]:
    classes = train.classes()
    if mode == "joint":
        return [run_joint_baseline(train, test, config, seed)]
    schedule = build_schedule(classes, config.g)
    if mode == "finetune":
        return run_finetune_baseline(train, test, schedule, config, seed)
    return run_experiment(train, test, schedule, config, seed, on_replay=on_replay)


def print_table(report: ResultsReport, stream=None) -> None:
    """One row per run: overall accuracy after each increment."""
    stream = stream or sys.stdout
    width = max(len(run.records) for run in report.runs)
    header = ["g", "seed"] + [f"inc{i}" for i in range(width)]
    rows = [header]
    for run in report.runs:
        cells = [str(report.config.g), str(run.seed)]
        cells += [f"{record.overall:.1f}" for record in run.records]
        rows.append(cells)
    widths = [max(len(row[i]) for row in rows if i < len(row)) for i in range(len(header))]
    for row in rows:
        line = "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row))
        print(line, file=stream)


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = merge_config(args)
        seeds = _parse_seeds(args, config)
        if args.mode == "clare" and not config.replay:
            print("warning: replay is off; this is the forgetting ablation",
                  file=sys.stderr)
        if args.mode != "clare" and args.dump_replay:
            raise UsageError("--dump-replay only applies to --mode clare")
        config = config.resolved()
        started = time.perf_counter()
        runs = []
        for seed in seeds:
            run_config = replace(config, seed=seed)
            train, test = load_datasets(run_config)
            on_replay = (
                _replay_dumper(args.dump_replay, train.dim, seed)
                if args.dump_replay
                else None
            )
            records = run_mode(args.mode, train, test, run_config, seed, on_replay)
            runs.append(RunResult(seed=seed, records=records))
        report = ResultsReport(
            mode=args.mode,
            config=replace(config, seed=seeds[0]),
            runs=runs,
            total_seconds=time.perf_counter() - started,
        )
        print_table(report)
        if args.out_path:
            write_report(report, args.out_path)
        if args.csv:
            write_csv(report, args.csv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_cli())
