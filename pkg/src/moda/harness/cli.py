"""Command-line entry point.

Subcommands cover each pipeline stage plus the end-to-end runners.  Errors
exit nonzero with a single machine-parsable line: ``error: <category>: <msg>``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from moda.errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    HarnessError,
    MiningError,
    ModaError,
    ShapeError,
    SharingError,
    TrainingError,
)
from moda.harness import config as cfgmod
from moda.harness import experiments, stages
from moda.harness.results import emit_results

_CATEGORIES = [
    (ConfigError, "config"),
    (DatasetError, "dataset"),
    (CheckpointError, "checkpoint"),
    (MiningError, "mining"),
    (SharingError, "sharing"),
    (TrainingError, "training"),
    (ShapeError, "shape"),
    (ContractError, "contract"),
    (HarnessError, "harness"),
]


def _category(err: Exception) -> str:
    for cls, name in _CATEGORIES:
        if isinstance(err, cls):
            return name
    if isinstance(err, OSError):
        return "io"
    return "internal"


def _variant(name: str) -> str:
    return name.replace("-", "_")


def _parse_values(raw: str):
    import json

    out = []
    for piece in raw.split(","):
        piece = piece.strip()
        try:
            out.append(json.loads(piece))
        except json.JSONDecodeError:
            out.append(piece)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moda",
        description="Multi-task offline RL pipeline on a synthetic grid city",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, **extra_flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None,
                       help="pipeline seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory")
        return p

    add("gen-data", "generate behavior trajectories for every task")

    p = add("train-contrastive", "train the sub-trajectory embedding for a task")
    p.add_argument("--task", type=int, required=True)

    p = add("share", "build a task's effective dataset")
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--strategy", default="contrastive",
                   choices=("contrastive", "none", "all", "uds"))

    p = add("train-world", "train dynamics and the transition detector")
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--strategy", default="contrastive",
                   choices=("contrastive", "none", "all", "uds"))

    p = add("train-policy", "train SAC inside the learned MDP")
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--strategy", default="contrastive",
                   choices=("contrastive", "none", "all", "uds"))
    p.add_argument("--variant", default="moda", choices=("moda", "moda-minus"))

    p = add("evaluate", "roll out a policy in the ground-truth environment")
    p.add_argument("--task", type=int, required=True)
    p.add_argument("--strategy", default="contrastive",
                   choices=("contrastive", "none", "all", "uds"))
    p.add_argument("--variant", default="moda",
                   choices=("moda", "moda-minus", "behavior"))

    p = add("pipeline", "run every stage end to end")
    p.add_argument("--task", type=int, action="append", default=None,
                   help="restrict to a task (repeatable; default all)")
    p.add_argument("--strategy", default="contrastive",
                   choices=("contrastive", "none", "all", "uds"))
    p.add_argument("--variant", default="moda", choices=("moda", "moda-minus"))

    p = add("sweep", "grid over one config key")
    p.add_argument("--key", required=True, help="dotted config key, e.g. contrastive.lambda")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--task", type=int, action="append", default=None)

    p = add("compare-variants", "gated vs ungated policies per task profile")
    p.add_argument("--task", type=int, action="append", default=None)

    p = add("compare-sharing", "the four sharing strategies on the scarce task")
    p.add_argument("--target", type=int, default=None)

    p = add("sweep-shared-count", "retrain with fixed shared-transition budgets")
    p.add_argument("--counts", default="0,500,1000,2000",
                   help="comma-separated transition budgets")
    p.add_argument("--task", type=int, action="append", default=None,
                   help="target tasks (default: most and least expert)")

    return parser


def _dispatch(args) -> None:
    cfg = cfgmod.load_config(args.config)
    seed = args.seed if args.seed is not None else cfg["seed"]
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    run_dir = stages.run_dir_for(out, seed)

    if args.command == "gen-data":
        path = stages.run_gen_data(cfg, run_dir, seed)
        print(path)
    elif args.command == "train-contrastive":
        print(stages.run_train_contrastive(cfg, run_dir, seed, args.task))
    elif args.command == "share":
        print(stages.run_share(cfg, run_dir, seed, args.task, args.strategy))
    elif args.command == "train-world":
        for path in stages.run_train_world(cfg, run_dir, seed, args.task, args.strategy):
            print(path)
    elif args.command == "train-policy":
        print(stages.run_train_policy(cfg, run_dir, seed, args.task,
                                      args.strategy, _variant(args.variant)))
    elif args.command == "evaluate":
        if args.variant == "behavior":
            row = stages.evaluate_behavior(cfg, seed, args.task)
        else:
            row = stages.run_evaluate(cfg, run_dir, seed, args.task,
                                      args.strategy, _variant(args.variant))
        emit_results([row], out / "results.csv")
        print(f"{row.mean_return} {row.std_return}")
        print(out / "results.csv")
    elif args.command == "pipeline":
        rows = experiments.run_pipeline(cfg, out, seed, tasks=args.task,
                                        strategy=args.strategy,
                                        variants=(_variant(args.variant),))
        print(out / "results.csv")
        for row in rows:
            print(f"task {row.task_id} {row.variant}: {row.mean_return:.4f}")
    elif args.command == "sweep":
        experiments.run_sweep(cfg, args.key, _parse_values(args.values), out,
                              tasks=args.task, seed=args.seed)
        print(out / "results.csv")
    elif args.command == "compare-variants":
        experiments.run_variant_comparison(cfg, out, tasks=args.task)
        print(out / "results.csv")
    elif args.command == "compare-sharing":
        experiments.run_sharing_comparison(cfg, out, target=args.target)
        print(out / "results.csv")
    elif args.command == "sweep-shared-count":
        counts = [int(v) for v in _parse_values(args.counts)]
        experiments.run_shared_count_sweep(cfg, out, counts, targets=args.task)
        print(out / "results.csv")
    else:  # pragma: no cover
        raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _dispatch(args)
    except ModaError as err:
        print(f"error: {_category(err)}: {err}", file=sys.stderr)
        return 2 if isinstance(err, ConfigError) else 1
    except OSError as err:
        print(f"error: io: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
