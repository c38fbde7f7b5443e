import math

import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbsmamba.core.exceptions import NonFiniteError, ShapeMismatchError
from tsbsmamba.models.config_models import StftConfig
from tsbsmamba.models.result_models import ComplexSpectrogram
from tsbsmamba.services.spectral import istft, magnitude, stft, window_square_sum


def test_one_second_frame_count():
    cfg = StftConfig()
    spec = stft(torch.zeros(2, 44100), cfg)
    assert tuple(spec.data.shape) == (2, 1025, 87)
    assert cfg.n_frames(44100) == 87


def test_zero_wave_gives_zero_spectrogram():
    spec = stft(torch.zeros(2, 4096), StftConfig())
    assert torch.count_nonzero(spec.data) == 0


def test_cosine_peaks_at_its_bin():
    cfg = StftConfig()
    t = torch.arange(cfg.sample_rate, dtype=torch.float64)
    tone = torch.cos(2 * math.pi * 16 * cfg.sample_rate / cfg.n_fft * t / cfg.sample_rate)
    mags = magnitude(stft(torch.stack([tone, tone]), cfg))
    interior = mags[0, :, 4:-4]
    assert torch.all(interior.argmax(dim=0) == 16)


def test_round_trip_is_exact_to_float_precision(f64):
    cfg = StftConfig()
    wave = torch.rand(2, cfg.sample_rate, generator=torch.Generator().manual_seed(0)) * 2 - 1
    restored = istft(stft(wave, cfg), wave.shape[-1])
    assert (restored - wave).abs().max() / wave.abs().max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(n_samples=st.integers(min_value=1, max_value=400))
def test_frame_count_matches_config(n_samples):
    cfg = StftConfig(n_fft=30, hop=8, sample_rate=2048)
    spec = stft(torch.randn(2, n_samples), cfg)
    assert spec.n_frames == cfg.n_frames(n_samples)
    assert spec.n_bins == 16


def test_stft_is_linear(f64, generator):
    cfg = StftConfig(n_fft=64, hop=16, sample_rate=8000)
    a = torch.randn(2, 500, generator=generator)
    b = torch.randn(2, 500, generator=generator)
    combined = stft(2.0 * a - b, cfg).data
    separate = 2.0 * stft(a, cfg).data - stft(b, cfg).data
    assert torch.allclose(combined, separate, atol=1e-12)


def _two_sided_energy(spec: torch.Tensor) -> torch.Tensor:
    """Per-frame energy of the full spectrum from its one-sided half."""
    power = spec.abs() ** 2
    return 2 * power.sum(dim=-2) - power[..., 0, :] - power[..., -1, :]


def test_frame_energy_obeys_parseval(f64, generator):
    cfg = StftConfig(n_fft=64, hop=16, sample_rate=8000)
    wave = torch.randn(2, 1000, generator=generator)
    spec = stft(wave, cfg).data

    padded = F.pad(wave.unsqueeze(0), (32, 32), mode="reflect").squeeze(0)
    frames = padded.unfold(-1, cfg.n_fft, cfg.hop) * torch.hann_window(cfg.n_fft, periodic=True)
    assert frames.shape[-2] == spec.shape[-1]
    assert torch.allclose(_two_sided_energy(spec), cfg.n_fft * (frames ** 2).sum(dim=-1), rtol=1e-10)


def test_white_noise_energy_is_consistent(f64, generator):
    cfg = StftConfig(n_fft=256, hop=64, sample_rate=8000)
    wave = torch.randn(2, 2 ** 16, generator=generator)
    interior = _two_sided_energy(stft(wave, cfg).data)[..., 4:-4]
    window_energy = float((torch.hann_window(cfg.n_fft, periodic=True) ** 2).sum())
    expected = cfg.n_fft * interior.shape[-1] * window_energy * (wave ** 2).mean(dim=-1)
    assert torch.allclose(interior.sum(dim=-1), expected, rtol=0.01)


def test_zero_spectrogram_inverts_to_silence():
    cfg = StftConfig()
    spec = ComplexSpectrogram(data=torch.zeros(2, cfg.n_bins, 10, dtype=torch.complex64), cfg=cfg)
    assert torch.count_nonzero(istft(spec, 4000)) == 0


def test_istft_honours_length_hint():
    cfg = StftConfig(n_fft=64, hop=16, sample_rate=8000)
    spec = stft(torch.randn(2, 300), cfg)
    assert istft(spec, 200).shape == (2, 200)
    assert istft(spec, 500).shape == (2, 500)


def test_hann_quarter_hop_overlap_is_constant():
    cfg = StftConfig()
    envelope = window_square_sum(cfg, n_frames=20)
    interior = envelope[cfg.n_fft:-cfg.n_fft]
    assert torch.allclose(interior, torch.full_like(interior, 1.5), atol=1e-5)


def test_batched_leading_dims_are_preserved():
    cfg = StftConfig(n_fft=64, hop=16, sample_rate=8000)
    spec = stft(torch.randn(3, 4, 2, 320), cfg)
    assert spec.data.shape[:3] == (3, 4, 2)
    assert istft(spec, 320).shape == (3, 4, 2, 320)


def test_invalid_inputs_raise():
    cfg = StftConfig()
    with pytest.raises(ShapeMismatchError):
        stft(torch.zeros(2, 0), cfg)
    bad = torch.zeros(2, 4096)
    bad[0, 10] = float("nan")
    with pytest.raises(NonFiniteError):
        stft(bad, cfg)
    with pytest.raises(ShapeMismatchError):
        istft(ComplexSpectrogram(data=torch.zeros(2, 10, 5, dtype=torch.complex64), cfg=cfg), 100)


def test_odd_fft_size_is_rejected():
    with pytest.raises(ValueError):
        StftConfig(n_fft=31)
