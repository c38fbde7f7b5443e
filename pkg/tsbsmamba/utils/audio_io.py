"""
WAV reading and writing through soundfile.

Arrays are [channel, sample] float64 in [-1, 1].
"""
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import soundfile as sf

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

SUBTYPES = {"pcm16": "PCM_16", "pcm24": "PCM_24", "float": "FLOAT"}


def read_wav(
    path: Path,
    expected_rate: Optional[int] = None,
    require_stereo: bool = True,
) -> Tuple[np.ndarray, int]:
    """
    Load a WAV file.

    Args:
        path: File to read
        expected_rate: Raise if the file's rate differs
        require_stereo: Raise unless the file has exactly two channels

    Returns:
        (samples [channel, sample], sample rate)
    """
    samples, rate = sf.read(str(path), dtype="float64", always_2d=True)
    if expected_rate is not None and rate != expected_rate:
        raise ShapeMismatchError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if require_stereo and samples.shape[1] != 2:
        raise ShapeMismatchError(f"{path}: {samples.shape[1]} channel(s), stereo input required")
    return np.ascontiguousarray(samples.T), rate


def write_wav(path: Path, samples: np.ndarray, sample_rate: int, subtype: str = "pcm16") -> Path:
    """Write [channel, sample] audio; integer formats are clipped to [-1, 1]."""
    if subtype not in SUBTYPES:
        raise ValueError(f"Unknown WAV subtype '{subtype}' (choose from {sorted(SUBTYPES)})")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeMismatchError(f"expected [channel, sample] audio, got shape {samples.shape}")
    if subtype != "float":
        peak = float(np.max(np.abs(samples), initial=0.0))
        if peak > 1.0:
            logger.warning(f"Clipping {path}: peak {peak:.3f} exceeds full scale")
        samples = np.clip(samples, -1.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), samples.T, sample_rate, subtype=SUBTYPES[subtype])
    return path
