"""
CSV exports: training log, SDR tables, spectrogram magnitudes, benchmarks.
"""
import csv
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from tsbsmamba.models.result_models import SdrReport

TRAIN_LOG_FIELDS = ["epoch", "step", "lr", "stage1", "stage2", "total", "grad_norm", "skipped"]


def write_rows(path: Path, fields: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fields))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_rows(path: Path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TrainingLog:
    """Appends one row per optimizer step; the header is written on creation."""

    def __init__(self, path: Path):
        self.path = Path(path)
        write_rows(self.path, TRAIN_LOG_FIELDS, [])

    def append(self, row: Dict[str, Any]) -> None:
        with open(self.path, "a", newline="") as f:
            csv.DictWriter(f, fieldnames=TRAIN_LOG_FIELDS).writerow(row)


def write_sdr_report(report: SdrReport, out_dir: Path) -> List[Path]:
    """sdr_report.csv (source, usdr, csdr) and sdr_chunks.csv (audit table)."""
    out_dir = Path(out_dir)
    summary = write_rows(
        out_dir / "sdr_report.csv",
        ["source", "usdr", "csdr"],
        [{"source": s, "usdr": report.usdr[s], "csdr": report.csdr[s]} for s in report.usdr],
    )
    chunks = write_rows(
        out_dir / "sdr_chunks.csv",
        ["song", "source", "chunk", "sdr", "skipped"],
        [c.model_dump() for c in report.chunks],
    )
    return [summary, chunks]


def write_spectrogram_csv(prefix: Path, magnitudes: np.ndarray) -> List[Path]:
    """
    One CSV per channel of a [channel, bin, frame] magnitude array, named
    `<prefix>.ch<c>.csv`; rows are bins, columns are frames.
    """
    paths = []
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for channel, plane in enumerate(np.asarray(magnitudes)):
        path = prefix.with_name(f"{prefix.name}.ch{channel}.csv")
        np.savetxt(path, plane, delimiter=",", fmt="%.6e")
        paths.append(path)
    return paths
