"""``stitchrl`` command-line entry point."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, StitchError
from .executor import MODES
from .store import ExperimentConfig, apply_overrides, config_hash, load_config

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="experiment config file (flat TOML)")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides experiment.seed)")
    p.add_argument("--out", metavar="DIR", help="run directory (overrides experiment.out)")
    p.add_argument("--workers", type=int, default=1, metavar="N", help="evaluation worker processes")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VAL",
                   help="section.key=value, repeatable")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stitchrl", description="Transition policies between pre-trained skills.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train-subtask", help="PPO pre-training of one subtask (or the single baseline)")
    _common(p)
    p.add_argument("--subtask", required=True, help="subtask id, or 'single' for the monolithic baseline")

    for name, text in (("collect-boundary", "collect start states and expert transitions per interval"),
                       ("train-transition", "train transition policies with adversarial IRL"),
                       ("train-switcher", "train stay/switch Q-networks"),
                       ("project", "PCA projection of per-controller action clouds"),
                       ("pipeline", "run every stage in order")):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("evaluate", help="evaluate one execution mode")
    _common(p)
    p.add_argument("--mode", choices=MODES, required=True)

    p = sub.add_parser("report", help="merge evaluation results into one table")
    _common(p)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("STITCHRL_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _resolve(args) -> tuple[ExperimentConfig, Path, int]:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = apply_overrides(cfg, args.override)
    if args.seed is not None:
        cfg = apply_overrides(cfg, [f"experiment.seed={args.seed}"])
    if args.out is not None:
        cfg.experiment.out = args.out
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1", field="workers")
    return cfg, Path(cfg.experiment.out), cfg.experiment.seed


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    _setup_logging()
    try:
        cfg, root, seed = _resolve(args)
        if args.command != "report":
            pipeline.snapshot_config(cfg, root)
        cmd = args.command
        if cmd == "train-subtask":
            pipeline.stage_train_subtask(cfg, root, args.subtask, seed, args.force)
        elif cmd == "collect-boundary":
            pipeline.stage_collect_boundary(cfg, root, seed, args.force)
        elif cmd == "train-transition":
            pipeline.stage_train_transition(cfg, root, seed, args.force)
        elif cmd == "train-switcher":
            pipeline.stage_train_switcher(cfg, root, seed, args.force)
        elif cmd == "evaluate":
            res = pipeline.stage_evaluate(cfg, root, args.mode, seed, args.workers, args.force)
            print(f"{args.mode}: {res.mean:.2f} ± {res.std:.2f} over {len(res.counts)} episodes")
        elif cmd == "project":
            proj = pipeline.stage_project(cfg, root, seed, args.force)
            ratios = " ".join(f"{r:.3f}" for r in proj.explained_variance_ratio)
            print(f"explained variance ratio: {ratios}")
        elif cmd == "report":
            md, _ = pipeline.stage_report(root)
            print(md, end="")
        elif cmd == "pipeline":
            pipeline.run_pipeline(cfg, root, seed, workers=args.workers, force=args.force)
            print((root / "report.md").read_text(encoding="utf-8"), end="")
        logging.getLogger("stitchrl").info("config %s", config_hash(cfg))
    except StitchError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
