"""
`info`: parameter and MAC table for a configuration.
"""
import argparse
from pathlib import Path

from tsbsmamba.core.config import load_model_config
from tsbsmamba.models.config_models import ModelConfig, RunConfig
from tsbsmamba.services.accounting import cost_report
from tsbsmamba.services.separator import build_model, force_identity
from tsbsmamba.utils.checkpoint import save_model
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

# Published totals: (parameters in M, GMACs per second of audio)
REFERENCE = {"full": (35.52, 212.11), "lightweight": (27.71, 107.95)}


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("info", help="Print parameter and MAC counts")
    parser.add_argument("--preset", choices=["full", "lightweight", "toy"], default="full")
    parser.add_argument("--instantiate", action="store_true", help="Also build the model and count its tensors")
    parser.add_argument("--write-identity", type=Path, metavar="PATH",
                        help="Write an identity-configured checkpoint (mask 1, residual 0)")
    parser.set_defaults(func=run)


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    cfg = load_model_config(run_cfg.config_path) if run_cfg.config_path else ModelConfig.preset(args.preset)
    report = cost_report(cfg, seconds=1.0)

    print(f"{'stage':<8}{'params (M)':>14}{'GMACs/s':>12}")
    for name, counts in (("stage 1", report.stage1), ("stage 2", report.stage2)):
        print(f"{name:<8}{counts.params / 1e6:>14.2f}{counts.macs / 1e9:>12.2f}")
    print(f"{'total':<8}{report.params / 1e6:>14.2f}{report.gmacs_per_second:>12.2f}")

    reference = REFERENCE.get(args.preset) if run_cfg.config_path is None else None
    if reference:
        params_ref, macs_ref = reference
        print(
            f"reference {params_ref:.2f} M / {macs_ref:.2f} G: "
            f"{100 * (report.params / 1e6 / params_ref - 1):+.1f}% params, "
            f"{100 * (report.gmacs_per_second / macs_ref - 1):+.1f}% MACs"
        )

    if args.instantiate or args.write_identity:
        model = build_model(cfg, seed=run_cfg.seed)
        counted = sum(p.numel() for p in model.parameters())
        print(f"instantiated: {counted} parameters (closed form {report.params})")
        if args.write_identity:
            path = save_model(args.write_identity, force_identity(model), metadata={"identity": True})
            logger.info(f"Wrote identity checkpoint {path}")
    return 0
