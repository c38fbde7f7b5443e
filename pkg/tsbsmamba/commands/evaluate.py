"""
`eval`: uSDR / cSDR of a checkpoint (or precomputed estimates) on stem folders,
or of a checkpoint on held-out seeded synthetic songs (`--synthetic SEED`).

Layout: `<stems>/<song>/<source>.wav`, optionally `<stems>/<song>/mixture.wav`
(otherwise the stems are summed). Estimates use the same per-song layout.
"""
import argparse
from pathlib import Path
from typing import Dict, List

import numpy as np
import torch

from tsbsmamba.models.config_models import DEFAULT_SOURCES, RunConfig
from tsbsmamba.services.evaluation import evaluate_songs, evaluate_synthetic, segment_and_separate
from tsbsmamba.utils.audio_io import read_wav
from tsbsmamba.utils.checkpoint import load_model
from tsbsmamba.utils.exports import write_sdr_report
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="Compute uSDR/cSDR against reference stems")
    parser.add_argument("stems", type=Path, nargs="?", help="Directory with one sub-directory per song")
    parser.add_argument("--checkpoint", type=Path, help="Separator to evaluate")
    parser.add_argument("--estimates", type=Path, help="Score existing estimates instead of running a model")
    parser.add_argument("--stage", type=int, choices=[1, 2], default=2, help="Which stage's output to score")
    parser.add_argument("--sources", nargs="+", help="Source names (default: the model's)")
    parser.add_argument("--sample-rate", type=int, default=44100, help="Rate of estimate files")
    parser.add_argument("--synthetic", type=int, metavar="SEED", help="Score on synthetic songs generated from SEED")
    parser.add_argument("--songs", type=int, default=2, help="Synthetic songs to generate")
    parser.add_argument("--seconds", type=float, default=6.0, help="Length of each synthetic song")
    parser.set_defaults(func=run)


def _song_dirs(root: Path) -> List[Path]:
    songs = sorted(p for p in root.iterdir() if p.is_dir())
    if not songs:
        raise FileNotFoundError(f"no song directories under {root}")
    return songs


def _read_sources(song: Path, sources: List[str], rate: int) -> Dict[str, np.ndarray]:
    return {s: read_wav(song / f"{s}.wav", expected_rate=rate)[0] for s in sources}


def _run_synthetic(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    if args.checkpoint is None or args.estimates is not None or args.stems is not None:
        raise ValueError("--synthetic takes a --checkpoint and no stems or estimates")
    model, _ = load_model(args.checkpoint)
    result = evaluate_synthetic(model, args.synthetic, n_songs=args.songs, seconds=args.seconds, stage=args.stage)
    paths = write_sdr_report(result.separated, run_cfg.output_dir)
    paths += write_sdr_report(result.baseline, run_cfg.output_dir / "baseline")
    for path in paths:
        logger.info(f"Wrote {path}")
    return 0


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    if args.synthetic is not None:
        return _run_synthetic(args, run_cfg)
    if args.stems is None:
        raise ValueError("pass a stems directory or --synthetic SEED")
    if (args.checkpoint is None) == (args.estimates is None):
        raise ValueError("pass exactly one of --checkpoint or --estimates")

    model = None
    if args.checkpoint:
        model, _ = load_model(args.checkpoint)
        sources, rate = list(model.cfg.sources), model.cfg.stft.sample_rate
    else:
        sources, rate = args.sources or list(DEFAULT_SOURCES), args.sample_rate

    songs = _song_dirs(args.stems)
    refs, ests = [], []
    for song in songs:
        reference = _read_sources(song, sources, rate)
        refs.append(reference)
        if model is None:
            ests.append(_read_sources(args.estimates / song.name, sources, rate))
            continue
        mixture_path = song / "mixture.wav"
        mixture = read_wav(mixture_path, expected_rate=rate)[0] if mixture_path.exists() else sum(reference.values())
        dtype = next(model.parameters()).dtype
        stitched = segment_and_separate(torch.as_tensor(mixture, dtype=dtype), model)
        estimates = stitched.stage(args.stage)
        ests.append({s: estimates[i].numpy() for i, s in enumerate(stitched.sources)})
        logger.info(f"Separated {song.name} ({stitched.n_segments} segments)")

    report = evaluate_songs(refs, ests, rate, song_names=[s.name for s in songs])
    for path in write_sdr_report(report, run_cfg.output_dir):
        logger.info(f"Wrote {path}")
    return 0
