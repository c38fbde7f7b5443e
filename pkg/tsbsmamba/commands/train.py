"""
`train`: fit a separator on synthetic or user-provided stems.
"""
import argparse

from tsbsmamba.core.config import load_training_config
from tsbsmamba.models.config_models import RunConfig, TrainingConfig
from tsbsmamba.services.training import Trainer
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="Train a separator; writes checkpoints and a CSV log")
    parser.add_argument("--epochs", type=int, help="Override the number of epochs")
    parser.add_argument("--steps", type=int, help="Override optimizer steps per epoch")
    parser.set_defaults(func=run)


def training_config(args: argparse.Namespace, run_cfg: RunConfig) -> TrainingConfig:
    """
    The run's TrainingConfig with command-line overrides applied.

    An explicit --seed wins; otherwise a seed from the config file is kept and
    the settings seed only fills in when the file has none.
    """
    cfg = load_training_config(run_cfg.config_path) if run_cfg.config_path else TrainingConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None or "seed" not in cfg.model_fields_set:
        overrides["seed"] = run_cfg.seed
    if args.epochs:
        overrides["epochs"] = args.epochs
    if args.steps:
        overrides["steps_per_epoch"] = args.steps
    return cfg.model_copy(update=overrides)


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    cfg = training_config(args, run_cfg)
    logger.info(f"Training with seed {cfg.seed}")

    summary = Trainer(cfg, run_cfg.output_dir).train()
    logger.info(
        f"Finished {summary.steps} steps: loss {summary.first_loss:.4f} -> {summary.last_loss:.4f}, "
        f"best validation {summary.best_validation:.4f}, final lr {summary.final_lr:.3g}"
    )
    logger.info(f"Last checkpoint: {summary.checkpoints[-1]}")
    return 0
