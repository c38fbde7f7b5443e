"""
Runtime comparison of the recurrent, quadratic and chunked SSD kernels.
"""
import time
from typing import Callable, List, Sequence

import torch
from pydantic import BaseModel

from tsbsmamba.core.exceptions import VerificationError
from tsbsmamba.services.ssd import ssd_chunked, ssd_dual, ssd_scan
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


class BenchRow(BaseModel):
    length: int
    scan_seconds: float
    dual_seconds: float
    chunked_seconds: float
    max_abs_diff: float

    @property
    def dual_over_scan(self) -> float:
        return self.dual_seconds / self.scan_seconds


def random_ssd_inputs(length: int, heads: int, headdim: int, d_state: int, generator: torch.Generator):
    """(x, a_bar, b_bar, C) with decays in (0.5, 1)."""
    x = torch.randn(length, heads, headdim, generator=generator)
    a_bar = 0.5 + 0.5 * torch.rand(length, heads, generator=generator)
    b_bar = torch.randn(length, heads, d_state, generator=generator) / d_state ** 0.5
    c = torch.randn(length, d_state, generator=generator)
    return x, a_bar, b_bar, c


def _best_of(fn: Callable[[], torch.Tensor], repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


@torch.no_grad()
def bench(
    lengths: Sequence[int] = (256, 512, 1024, 2048),
    heads: int = 2,
    headdim: int = 16,
    d_state: int = 16,
    chunk_size: int = 64,
    repeats: int = 3,
    seed: int = 0,
) -> List[BenchRow]:
    """
    Time every kernel per sequence length. Before timing, the three outputs
    must agree; disagreement aborts the benchmark.
    """
    tolerance = 1e-8 if torch.get_default_dtype() == torch.float64 else 1e-3
    generator = torch.Generator().manual_seed(seed)
    rows = []
    for length in lengths:
        inputs = random_ssd_inputs(length, heads, headdim, d_state, generator)
        reference = ssd_scan(*inputs)
        scale = max(float(reference.abs().max()), 1.0)
        diff = max(
            float((ssd_dual(*inputs) - reference).abs().max()),
            float((ssd_chunked(*inputs, chunk_size=chunk_size) - reference).abs().max()),
        )
        if diff > tolerance * scale:
            raise VerificationError("dual-form equivalence", f"T={length}: kernels differ by {diff:.3e}")

        row = BenchRow(
            length=length,
            scan_seconds=_best_of(lambda: ssd_scan(*inputs), repeats),
            dual_seconds=_best_of(lambda: ssd_dual(*inputs), repeats),
            chunked_seconds=_best_of(lambda: ssd_chunked(*inputs, chunk_size=chunk_size), repeats),
            max_abs_diff=diff,
        )
        logger.info(
            f"T={length:5d}: scan {row.scan_seconds * 1e3:8.2f} ms, dual {row.dual_seconds * 1e3:8.2f} ms, "
            f"chunked {row.chunked_seconds * 1e3:8.2f} ms"
        )
        rows.append(row)
    return rows
