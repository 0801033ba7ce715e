"""
DiffTF - Main Application
=========================
Entry point of the triplane diffusion pipeline.
Minimal app.py that parses the command line and delegates to the pipeline engine.

    python app.py gen-data --out runs/demo --preset tiny
    python app.py fit --out runs/demo --preset tiny
    python app.py train --out runs/demo --preset tiny --no-cp
    python app.py sample --out runs/demo --preset tiny --class 2
    python app.py interpolate --out runs/demo --preset tiny
    python app.py eval --out runs/demo --preset tiny

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

from config.settings import PRESETS, RunConfig, apply_overrides, load_config
from core.pipeline_engine import create_pipeline_engine
from core.run_context import CommandType

ABLATIONS = {"no-cp-tf": "ori_tf"}


# ============================================
# ARGUMENTS
# ============================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftf",
        description="DiffTF - 3D-aware transformer diffusion over triplanes",
    )
    parser.add_argument("command", choices=[c.value for c in CommandType], help="Pipeline stage to run")
    parser.add_argument("--config", type=str, help="JSON config file")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="default",
                        help="Base settings the config file and overrides apply to")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config value (repeatable)")
    parser.add_argument("--out", type=str, help="Run directory (default: $DIFFTF_RUNS_DIR)")
    parser.add_argument("--seed", type=int, help="Master seed")
    parser.add_argument("--workers", type=int, help="Worker threads (default: $DIFFTF_WORKERS)")
    parser.add_argument("--class", dest="class_label", type=int, help="Class label for sample/interpolate")
    parser.add_argument("--sampler", choices=["ddpm", "ddim"], help="Sampler used by `sample`")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars")

    ablation = parser.add_argument_group("ablations")
    ablation.add_argument("--no-tp-regu", action="store_true", help="Fit triplanes without TV/L2 regularization")
    ablation.add_argument("--no-tp-norm", action="store_true", help="Train on unnormalized triplanes")
    ablation.add_argument("--no-cp", action="store_true", help="Drop cross-plane attention in the encoder")
    ablation.add_argument("--ori-tf", action="store_true", help="Plain transformer instead of the cross-plane one")
    ablation.add_argument("--ablation", choices=sorted(ABLATIONS), action="append", default=[],
                          help="Named ablation (no-cp-tf is the same as --ori-tf)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """preset -> --config file -> --set overrides -> dedicated flags."""
    config = PRESETS[args.preset]()
    if args.config:
        config = load_config(args.config, base=config)
    config = apply_overrides(config, args.overrides)

    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.no_progress:
        updates["progress"] = False
    for flag in ("no_tp_regu", "no_tp_norm", "no_cp", "ori_tf"):
        if getattr(args, flag):
            updates[flag] = True
    for name in args.ablation:
        updates[ABLATIONS[name]] = True

    sample = {}
    if args.class_label is not None:
        sample["class_label"] = args.class_label
    if args.sampler is not None:
        sample["sampler"] = args.sampler
    if sample:
        updates["sample"] = dataclasses.replace(config.sample, **sample)

    config = dataclasses.replace(config, **updates)
    config.validate()
    return config


# ============================================
# MAIN
# ============================================
def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = resolve_config(args)
    except FileNotFoundError as e:
        parser.error(f"config file not found: {e.filename}")
    except (ValueError, TypeError, json.JSONDecodeError) as e:
        parser.error(f"invalid configuration: {e}")

    if not config.output_dir:
        parser.error("an output directory is required: pass --out or set DIFFTF_RUNS_DIR")
    if Path(config.output_dir).exists() and not Path(config.output_dir).is_dir():
        parser.error(f"--out {config.output_dir} is not a directory")

    engine = create_pipeline_engine(config, config.output_dir)
    result = engine.run(args.command)
    return result.exit_code


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n[ERROR] Interrupted")
        sys.exit(130)
