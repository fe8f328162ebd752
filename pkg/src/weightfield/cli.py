"""Command-line entry point.

Subcommands: init-config, fit, train, sample, extract, eval, pipeline.
Exit codes: 0 success, 1 validation/input error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config as config_mod
from . import pipeline
from .pipeline import PipelineError


def _parse_trajectory(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    except ValueError:
        raise PipelineError(f"--trajectory expects comma-separated integers, got {text!r}")


def _load(args) -> config_mod.PipelineConfig:
    cfg = config_mod.load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "mode", None) is not None and args.mode != cfg.mode:
        raise PipelineError(f"--mode {args.mode} conflicts with config mode {cfg.mode}; "
                            f"regenerate the config with init-config --mode {args.mode}")
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weightfield",
        description="Shape generation by diffusion over implicit-field MLP weights.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=False, trajectory=False):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--mode", choices=("3d", "4d"), default=None,
                       help="assert the config's mode")
        if jobs:
            p.add_argument("--jobs", type=int, default=None, help="parallel fit workers")
        if trajectory:
            p.add_argument("--trajectory", default=None,
                           help="comma-separated denoising iteration counts to snapshot")

    p = sub.add_parser("init-config", help="write a config JSON with full defaults")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--mode", choices=("3d", "4d"), default="3d")

    common(sub.add_parser("fit", help="fit one MLP per corpus shape"), jobs=True)
    common(sub.add_parser("train", help="train the weight-space denoiser"))
    p = sub.add_parser("sample", help="draw de-duplicated weight samples")
    common(p, trajectory=True)
    p.add_argument("--count", type=int, default=None, help="override sample count")
    p = sub.add_parser("extract", help="run marching cubes over sampled weights")
    common(p)
    p.add_argument("--checkpoints", default=None, help="checkpoint dir (default: run samples)")
    p = sub.add_parser("eval", help="MMD/COV/1-NNA of generated vs reference meshes")
    common(p)
    p.add_argument("--generated", default=None, help="generated mesh dir (default: run extracted)")
    p.add_argument("--reference", default=None, help="reference mesh dir (default: run meshes)")
    common(sub.add_parser("pipeline", help="fit + train + sample + extract + eval"),
           jobs=True, trajectory=True)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "init-config":
        cfg = config_mod.default_config(args.mode)
        if args.out:
            config_mod.save_config(cfg, args.out)
        else:
            print(config_mod.to_json(cfg))
        return 0

    cfg = _load(args)
    if args.command == "fit":
        pipeline.cmd_fit(cfg)
    elif args.command == "train":
        pipeline.cmd_train(cfg)
    elif args.command == "sample":
        traj = _parse_trajectory(args.trajectory) if args.trajectory else None
        pipeline.cmd_sample(cfg, count=args.count, trajectory=traj)
    elif args.command == "extract":
        pipeline.cmd_extract(cfg, checkpoint_dir=args.checkpoints)
    elif args.command == "eval":
        pipeline.cmd_eval(cfg, generated_dir=args.generated, reference_dir=args.reference)
    elif args.command == "pipeline":
        traj = _parse_trajectory(args.trajectory) if args.trajectory else None
        if traj is not None:
            cfg = dataclasses.replace(cfg, sample=dataclasses.replace(cfg.sample,
                                                                      trajectory=traj))
        pipeline.cmd_pipeline(cfg)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (PipelineError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - boundary: anything else is a runtime failure
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
