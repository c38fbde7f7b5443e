"""
`bench`: scan vs. quadratic vs. chunked SSD runtimes.
"""
import argparse

from tsbsmamba.models.config_models import RunConfig
from tsbsmamba.services.benchmark import bench
from tsbsmamba.utils.exports import write_rows
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("bench", help="Time the SSD kernels over sequence lengths")
    parser.add_argument("--lengths", type=int, nargs="+", default=[256, 512, 1024, 2048])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--d-state", type=int, default=16)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    rows = bench(args.lengths, heads=args.heads, d_state=args.d_state, repeats=args.repeats, seed=run_cfg.seed)
    path = write_rows(
        run_cfg.output_dir / "bench.csv",
        ["length", "scan_seconds", "dual_seconds", "chunked_seconds", "dual_over_scan", "max_abs_diff"],
        [{**row.model_dump(), "dual_over_scan": row.dual_over_scan} for row in rows],
    )
    for previous, current in zip(rows, rows[1:]):
        logger.info(
            f"T {previous.length} -> {current.length}: dual x{current.dual_seconds / previous.dual_seconds:.2f}, "
            f"scan x{current.scan_seconds / previous.scan_seconds:.2f}"
        )
    logger.info(f"Wrote {path}")
    return 0
