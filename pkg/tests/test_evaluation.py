import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbsmamba.core.exceptions import SeparationError, ShapeMismatchError, SilentReferenceError
from tsbsmamba.models.config_models import ModelConfig
from tsbsmamba.services.evaluation import (
    csdr,
    evaluate_songs,
    evaluate_synthetic,
    sdr,
    segment_and_separate,
    segment_offsets,
    stitching_weights,
    triangular_weights,
    usdr,
)
from tsbsmamba.services.separator import build_model, force_identity

RATE = 100


def _noise(seed: int, shape=(2, 300)) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def test_sdr_reference_values():
    ref = _noise(0)
    assert sdr(ref, ref) == pytest.approx(100.0)
    assert sdr(ref, 0.5 * ref) == pytest.approx(6.0206, abs=1e-4)
    assert sdr(ref, np.zeros_like(ref)) == pytest.approx(0.0)


@given(scale=st.floats(min_value=1e-3, max_value=1e3), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_sdr_is_scale_invariant(scale, seed):
    ref, est = _noise(seed), _noise(seed + 1)
    assert sdr(scale * ref, scale * est) == pytest.approx(sdr(ref, est), abs=1e-9)


def test_sdr_errors():
    with pytest.raises(SilentReferenceError):
        sdr(np.zeros((2, 10)), np.ones((2, 10)))
    with pytest.raises(ShapeMismatchError):
        sdr(np.ones((2, 10)), np.ones((2, 11)))


def _songs(values):
    return [{"x": v} for v in values]


def test_usdr_averages_songs():
    a, b = _noise(1), _noise(2)
    # error energies of 1/4 and 1/64 of the signal: 6.02 dB and 18.06 dB
    refs = _songs([a, b])
    ests = _songs([0.5 * a, 0.875 * b])
    expected = (10 * np.log10(4) + 10 * np.log10(64)) / 2
    assert usdr(refs, ests)["x"] == pytest.approx(expected)


def test_csdr_is_median_of_chunks():
    ref = _noise(3, (2, 3 * RATE))
    est = ref.copy()
    est[:, :RATE] *= 0.5       # 6.02 dB
    est[:, RATE:2 * RATE] = 0  # 0 dB
    medians, rows = csdr(_songs([ref]), _songs([est]), RATE)
    assert medians["x"] == pytest.approx(10 * np.log10(4))
    assert [r.chunk for r in rows] == [0, 1, 2]


def test_csdr_skips_silent_chunks_and_partial_tail():
    ref = _noise(4, (2, 3 * RATE + 40))
    ref[:, RATE:2 * RATE] = 0
    est = 0.5 * ref
    medians, rows = csdr(_songs([ref]), _songs([est]), RATE, song_names=["song"])
    assert medians["x"] == pytest.approx(10 * np.log10(4))
    assert len(rows) == 3
    assert [r.skipped for r in rows] == [False, True, False]
    assert rows[1].sdr is None and rows[1].song == "song"


def test_all_silent_source_raises():
    ref = np.zeros((2, 2 * RATE))
    with pytest.raises(SeparationError):
        csdr(_songs([ref]), _songs([ref]), RATE)


def test_report_carries_both_metrics():
    ref = _noise(5, (2, 2 * RATE))
    report = evaluate_songs(_songs([ref]), _songs([0.5 * ref]), RATE)
    assert report.usdr["x"] == pytest.approx(report.csdr["x"])
    assert report.usdr_mean == pytest.approx(10 * np.log10(4))


def test_song_count_mismatch():
    with pytest.raises(ShapeMismatchError):
        usdr(_songs([_noise(0)]), _songs([]))


def test_ten_seconds_need_fifteen_segments():
    rate = 44100
    offsets = segment_offsets(10 * rate, 3 * rate, rate // 2)
    assert len(offsets) == 15
    assert offsets[-1] + 3 * rate >= 10 * rate


@pytest.mark.parametrize("n_samples,segment,hop", [(1000, 300, 50), (1000, 300, 70), (200, 300, 50), (301, 300, 300)])
def test_stitching_weights_partition_unity(n_samples, segment, hop):
    weights = stitching_weights(n_samples, segment, hop, dtype=torch.float64)
    assert weights.shape == (len(segment_offsets(n_samples, segment, hop)), n_samples)
    assert torch.all(weights >= 0)
    assert torch.allclose(weights.sum(dim=0), torch.ones(n_samples, dtype=torch.float64))


def test_triangular_window_positive_and_symmetric():
    for segment in (6, 7):
        window = triangular_weights(segment)
        assert window.shape == (segment,)
        assert torch.all(window > 0)
        assert torch.equal(window, window.flip(0))


def test_segmented_identity_reproduces_input(f64):
    model = force_identity(build_model(ModelConfig.toy(), seed=0))
    rate = model.cfg.stft.sample_rate
    wave = torch.rand(2, int(4.3 * rate)) * 2 - 1
    stitched = segment_and_separate(wave, model, segment_seconds=1.0, hop_seconds=0.25)
    assert stitched.stage2.shape == (4, 2, wave.shape[-1])
    assert stitched.n_segments == len(segment_offsets(wave.shape[-1], rate, rate // 4))
    for stage in (1, 2):
        assert torch.allclose(stitched.stage(stage), wave.expand(4, -1, -1), atol=1e-9)


def test_identity_separator_matches_mixture_baseline(f64):
    model = force_identity(build_model(ModelConfig.toy(), seed=0))
    result = evaluate_synthetic(model, seed=99, n_songs=2, seconds=3.0, segment_seconds=1.0, hop_seconds=0.5)
    assert result.seed == 99 and result.stage == 2
    assert set(result.separated.usdr) == set(model.cfg.sources)
    for source in model.cfg.sources:
        assert result.separated.usdr[source] == pytest.approx(result.baseline.usdr[source], abs=1e-6)
    assert result.improvement == pytest.approx(0.0, abs=1e-6)
    assert len(result.baseline.chunks) == 2 * 3 * len(model.cfg.sources)


def test_synthetic_evaluation_is_seeded(toy_model):
    first = evaluate_synthetic(toy_model, seed=5, n_songs=1, seconds=3.0, stage=1, segment_seconds=1.0)
    again = evaluate_synthetic(toy_model, seed=5, n_songs=1, seconds=3.0, stage=1, segment_seconds=1.0)
    other = evaluate_synthetic(toy_model, seed=6, n_songs=1, seconds=3.0, stage=1, segment_seconds=1.0)
    assert first.baseline.usdr == again.baseline.usdr
    assert first.separated.usdr == again.separated.usdr
    assert first.baseline.usdr != other.baseline.usdr
    with pytest.raises(ValueError):
        evaluate_synthetic(toy_model, seed=5, stage=3)


def test_segmented_inference_requires_stereo(toy_model):
    with pytest.raises(ShapeMismatchError):
        segment_and_separate(torch.randn(1, 5000), toy_model)


def test_metrics_match_brute_force_on_three_songs():
    rng = np.random.default_rng(9)
    lengths = [3 * RATE, 2 * RATE + 17, 4 * RATE]
    refs = [{s: rng.standard_normal((2, n)) for s in ("a", "b")} for n in lengths]
    ests = [{s: ref[s] + rng.uniform(0.1, 1.0) * rng.standard_normal(ref[s].shape) for s in ref} for ref in refs]

    def energy_ratio(r, e):
        return 10 * np.log10(np.sum(r ** 2) / np.sum((r - e) ** 2))

    report = evaluate_songs(refs, ests, RATE)
    for s in ("a", "b"):
        whole = [energy_ratio(r[s], e[s]) for r, e in zip(refs, ests)]
        chunks = [
            energy_ratio(r[s][:, c * RATE:(c + 1) * RATE], e[s][:, c * RATE:(c + 1) * RATE])
            for r, e in zip(refs, ests)
            for c in range(r[s].shape[-1] // RATE)
        ]
        assert report.usdr[s] == pytest.approx(np.mean(whole), rel=1e-12)
        assert report.csdr[s] == pytest.approx(np.median(chunks), rel=1e-12)
    assert len(report.chunks) == 2 * (3 + 2 + 4)
