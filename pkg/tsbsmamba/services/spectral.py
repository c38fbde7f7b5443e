"""
Forward and inverse STFT for multichannel audio.

Waveforms are [..., channel, sample]; spectrograms are [..., channel, bin, frame].
Frames are centered with reflection padding, so a signal of L samples yields
L // hop + 1 frames. Inputs too short to reflect fall back to zero padding.
"""
from typing import Optional

import torch

from tsbsmamba.core.exceptions import NonFiniteError, ShapeMismatchError
from tsbsmamba.models.config_models import StftConfig
from tsbsmamba.models.result_models import ComplexSpectrogram


def analysis_window(cfg: StftConfig, dtype: Optional[torch.dtype] = None, device=None) -> torch.Tensor:
    """Periodic Hann window of length n_fft."""
    return torch.hann_window(cfg.n_fft, periodic=True, dtype=dtype or torch.get_default_dtype(), device=device)


def stft(wave: torch.Tensor, cfg: StftConfig) -> ComplexSpectrogram:
    """
    Short-time Fourier transform of every channel.

    Args:
        wave: Real samples [..., channel, L]
        cfg: STFT configuration

    Returns:
        Complex spectrogram [..., channel, n_fft/2+1, T]

    Raises:
        ShapeMismatchError: If the input is empty
        NonFiniteError: If the input contains NaN or infinity
    """
    if wave.dim() < 1 or wave.shape[-1] == 0 or wave.numel() == 0:
        raise ShapeMismatchError(f"cannot transform an empty waveform of shape {tuple(wave.shape)}")
    if wave.is_complex():
        raise ShapeMismatchError("stft expects a real waveform")
    if not torch.isfinite(wave).all():
        raise NonFiniteError("stft input")

    lead, n_samples = wave.shape[:-1], wave.shape[-1]
    flat = wave.reshape(-1, n_samples)
    # Reflection needs more samples than the pad width
    pad_mode = "reflect" if n_samples > cfg.n_fft // 2 else "constant"
    spec = torch.stft(
        flat,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        window=analysis_window(cfg, dtype=flat.dtype, device=flat.device),
        center=cfg.center,
        pad_mode=pad_mode,
        onesided=True,
        return_complex=True,
    )
    return ComplexSpectrogram(data=spec.reshape(*lead, *spec.shape[-2:]), cfg=cfg)


def istft(spec: ComplexSpectrogram, length_hint: int) -> torch.Tensor:
    """
    Inverse STFT by weighted overlap-add.

    The synthesis window equals the analysis window and every output sample is
    divided by the overlapped squared-window sum.

    Args:
        spec: Complex spectrogram [..., channel, F, T]
        length_hint: Output length in samples (trim or zero-pad)

    Returns:
        Real samples [..., channel, length_hint]
    """
    data = spec.data
    cfg = spec.cfg
    if data.shape[-1] == 0 or data.numel() == 0:
        raise ShapeMismatchError("cannot invert a spectrogram with no frames")
    if data.shape[-2] != cfg.n_bins:
        raise ShapeMismatchError(f"spectrogram has {data.shape[-2]} bins, config expects {cfg.n_bins}")
    if length_hint < 1:
        raise ShapeMismatchError(f"length_hint must be positive, got {length_hint}")

    lead = data.shape[:-2]
    flat = data.reshape(-1, *data.shape[-2:])
    real_dtype = flat.real.dtype
    wave = torch.istft(
        flat,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        window=analysis_window(cfg, dtype=real_dtype, device=flat.device),
        center=cfg.center,
        onesided=True,
        length=length_hint,
    )
    return wave.reshape(*lead, length_hint)


def window_square_sum(cfg: StftConfig, n_frames: int) -> torch.Tensor:
    """Overlapped squared-window envelope used as the ISTFT denominator."""
    window = analysis_window(cfg) ** 2
    total = (n_frames - 1) * cfg.hop + cfg.n_fft
    envelope = torch.zeros(total)
    for t in range(n_frames):
        envelope[t * cfg.hop:t * cfg.hop + cfg.n_fft] += window
    return envelope


def magnitude(spec: ComplexSpectrogram) -> torch.Tensor:
    """|X| with the same layout as the spectrogram."""
    return spec.data.abs()
