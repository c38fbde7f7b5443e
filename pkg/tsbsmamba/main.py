"""
Command-line entry point: `python -m tsbsmamba.main <command> [options]`.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from tsbsmamba.commands import bench, evaluate, info, separate, train, verify
from tsbsmamba.core.config import apply_precision, apply_runtime, get_settings
from tsbsmamba.core.exceptions import SeparationError
from tsbsmamba.models.config_models import RunConfig
from tsbsmamba.utils.logger import get_logger, set_level

logger = get_logger(__name__)

COMMANDS = [train, separate, evaluate, verify, bench, info]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsbsmamba", description="Two-stage band-split Mamba-2 source separation")
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--seed", type=int, help="Random seed (default from settings)")
    parser.add_argument("--precision", choices=["f32", "f64"], help="Floating-point precision")
    parser.add_argument("--out", type=Path, help="Output directory")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ...")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_level(args.log_level)

    try:
        run_cfg = RunConfig(
            subcommand=args.command,
            config_path=args.config,
            seed=settings.seed if args.seed is None else args.seed,
            precision=args.precision or settings.precision,
            output_dir=args.out or Path(settings.output_dir),
        )
    except ValidationError as e:
        logger.error(f"Invalid arguments: {e}")
        return 1

    apply_precision(run_cfg.precision)
    apply_runtime(settings, seed=run_cfg.seed)
    logger.debug(f"Running '{run_cfg.subcommand}' with precision {run_cfg.precision}, seed {run_cfg.seed}")

    try:
        return args.func(args, run_cfg)
    except (SeparationError, ValueError, OSError) as e:
        logger.error(f"{run_cfg.subcommand} failed: {e}")
        return 1
    except Exception as e:
        logger.error(f"Unexpected error in {run_cfg.subcommand}: {e}", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
