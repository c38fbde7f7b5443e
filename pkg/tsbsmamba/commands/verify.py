"""
`verify`: run the release-gate suites.
"""
import argparse

from tsbsmamba.models.config_models import RunConfig
from tsbsmamba.services.verification import run_suites
from tsbsmamba.utils.exports import write_rows
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("verify", help="Run all verification suites")
    # Test hook: offsets the quadratic-form output to prove the suite can fail
    parser.add_argument("--perturb-dual", type=float, default=0.0, help=argparse.SUPPRESS)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    report = run_suites(seed=run_cfg.seed, perturb_dual=args.perturb_dual)
    write_rows(
        run_cfg.output_dir / "verify_report.csv",
        ["name", "invariant", "passed", "detail", "seconds"],
        [r.model_dump() for r in report.results],
    )
    if report.passed:
        logger.info(f"All {len(report.results)} suites passed")
        return 0
    for failure in report.failures():
        logger.error(f"Suite '{failure.name}' violated {failure.invariant}: {failure.detail}")
    return 1
