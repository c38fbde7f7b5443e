"""
`separate`: split a stereo WAV into one file per source.
"""
import argparse
from pathlib import Path

import torch

from tsbsmamba.models.config_models import RunConfig
from tsbsmamba.services.evaluation import segment_and_separate
from tsbsmamba.services.spectral import magnitude, stft
from tsbsmamba.utils.audio_io import SUBTYPES, read_wav, write_wav
from tsbsmamba.utils.checkpoint import load_model
from tsbsmamba.utils.exports import write_spectrogram_csv
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("separate", help="Separate a stereo mixture WAV")
    parser.add_argument("input", type=Path, help="Stereo WAV at the model's sample rate")
    parser.add_argument("--checkpoint", type=Path, required=True)
    parser.add_argument("--export-stage1", action="store_true", help="Also write stage-1 estimates")
    parser.add_argument("--spectrogram-csv", action="store_true", help="Write magnitude spectrogram CSVs")
    parser.add_argument("--subtype", choices=sorted(SUBTYPES), default="pcm16")
    parser.add_argument("--segment-seconds", type=float, default=3.0)
    parser.add_argument("--hop-seconds", type=float, default=0.5)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace, run_cfg: RunConfig) -> int:
    model, _ = load_model(args.checkpoint)
    cfg = model.cfg
    rate = cfg.stft.sample_rate
    audio, _ = read_wav(args.input, expected_rate=rate, require_stereo=True)
    dtype = next(model.parameters()).dtype
    wave = torch.as_tensor(audio, dtype=dtype)

    stitched = segment_and_separate(
        wave, model, segment_seconds=args.segment_seconds, hop_seconds=args.hop_seconds
    )
    out_dir = run_cfg.output_dir
    stem = args.input.stem
    stages = [(2, "")] + ([(1, ".stage1")] if args.export_stage1 else [])
    for stage, suffix in stages:
        estimates = stitched.stage(stage)
        for i, source in enumerate(stitched.sources):
            path = write_wav(out_dir / f"{stem}.{source}{suffix}.wav", estimates[i].numpy(), rate, args.subtype)
            logger.info(f"Wrote {path}")
            if args.spectrogram_csv:
                mags = magnitude(stft(estimates[i], cfg.stft)).numpy()
                write_spectrogram_csv(out_dir / f"{stem}.{source}{suffix}.spec", mags)
    if args.spectrogram_csv:
        write_spectrogram_csv(out_dir / f"{stem}.mixture.spec", magnitude(stft(wave, cfg.stft)).numpy())
    return 0
