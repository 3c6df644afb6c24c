"""Command-line entry point.

Subcommands: ingest, train, evaluate, stratify, synth, shift-eval, prune.
Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 internal
invariant violation. The MOBMIX_SEED environment variable overrides the
config-file seed; an explicit --seed flag overrides both.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import pipeline
from .config import PipelineConfig, apply_file, format_config, load_config
from .errors import DataFormatError, InvariantError


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1 instead of 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="INI config file")
    common.add_argument("--seed", type=int, help="override every configured seed")
    common.add_argument("--input", metavar="FILE", help="input data file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--store", metavar="DIR", help="model store location")
    common.add_argument("--threads", type=int, help="worker cap (currently single-threaded)")
    common.add_argument(
        "--print-config",
        action="store_true",
        help="print the effective configuration and exit",
    )
    return common


def build_parser() -> _Parser:
    parser = _Parser(prog="mobmix", description=__doc__.splitlines()[0])
    common = _common()
    sub = parser.add_subparsers(dest="cmd")

    sub.add_parser("ingest", parents=[common], help="pings/stops to daily trajectories")
    sub.add_parser("train", parents=[common], help="filter, split, and fit the models")
    p_eval = sub.add_parser("evaluate", parents=[common], help="score the held-out split")
    p_eval.add_argument("--stratify", action="store_true", help="per-overlap-bin accuracy")
    p_eval.add_argument("--spatial", action="store_true", help="per-tile accuracy and Moran's I")
    p_eval.add_argument("--prune", action="store_true", help="pruned-ensemble accuracy")
    p_eval.add_argument("--shift", action="store_true", help="post-cutoff monthly accuracy")
    p_eval.add_argument("--poi", metavar="FILE", help="POI counts (CSV or JSON)")
    p_eval.add_argument("--cutoff", metavar="DAY", help="training cutoff day (ISO date)")
    sub.add_parser("stratify", parents=[common], help="overlap scores for test trajectories")
    p_synth = sub.add_parser("synth", parents=[common], help="generate synthetic data")
    p_synth.add_argument("scenario", nargs="?", help="scenario INI file")
    p_shift = sub.add_parser("shift-eval", parents=[common], help="train-cutoff shift protocol")
    p_shift.add_argument("--cutoff", metavar="DAY", help="training cutoff day (ISO date)")
    sub.add_parser("prune", parents=[common], help="pruned-collective ensemble accuracy")
    return parser


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(getattr(args, "config", None))
    scenario = getattr(args, "scenario", None)
    if scenario:
        apply_file(config, scenario)
    env_seed = os.environ.get("MOBMIX_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise DataFormatError(f"MOBMIX_SEED must be an integer, got {env_seed!r}") from exc
        config.seed = seed
        config.synth.seed = seed
    if args.seed is not None:
        config.seed = args.seed
        config.synth.seed = args.seed
    if args.input:
        config.input = args.input
    if args.out:
        config.output_dir = args.out
    if args.store:
        config.model_store = args.store
    if args.threads is not None:
        config.threads = args.threads
    if getattr(args, "poi", None):
        config.poi = args.poi
    if getattr(args, "cutoff", None):
        config.shift_cutoff_day = args.cutoff
    config.validate()
    return config


def _print_result(result: dict) -> None:
    for key in sorted(result):
        value = result[key]
        if isinstance(value, (str, int, float, bool)):
            print(f"{key} = {value}")


def _dispatch(args: argparse.Namespace, config: PipelineConfig) -> int:
    if args.cmd == "ingest":
        result = pipeline.run_ingest(config)
    elif args.cmd == "train":
        result = pipeline.run_train(config)
    elif args.cmd == "evaluate":
        result = pipeline.run_evaluate(
            config,
            with_stratify=args.stratify,
            with_spatial=args.spatial,
            with_prune=args.prune,
            with_shift=args.shift,
        )
        if args.stratify:
            deltas = result.get("bin_weighted_consistency_delta", {})
            worst = max(deltas.values()) if deltas else 0.0
            print(f"bin-weighted ACC@{config.k} identity holds (max delta {worst:.2e})")
        acc = result.get("overall_acc", {})
        for name in ("I", "C", "M"):
            if name in acc:
                print(f"overall acc@{config.k} {name} = {acc[name]:.4f}")
    elif args.cmd == "stratify":
        result = pipeline.run_stratify(config)
    elif args.cmd == "synth":
        result = pipeline.run_synth(config)
    elif args.cmd == "shift-eval":
        result = pipeline.run_shift_eval(config)
        for name, drop in sorted(result.get("relative_drop", {}).items()):
            print(f"relative drop {name} = {drop:.4f}")
    elif args.cmd == "prune":
        result = pipeline.run_prune(config)
    else:
        raise AssertionError(f"unhandled subcommand {args.cmd!r}")
    _print_result(result)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.cmd is None:
            parser.error("a subcommand is required")
        config = _build_config(args)
        if args.print_config:
            print(format_config(config), end="")
            return 0
        if args.cmd == "evaluate" and args.shift and not config.shift_cutoff_day:
            parser.error("--shift requires --cutoff or [shift] cutoff_day")
        if args.cmd == "shift-eval" and not config.shift_cutoff_day:
            parser.error("shift-eval requires --cutoff or [shift] cutoff_day")
        return _dispatch(args, config)
    except (InvariantError, AssertionError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
