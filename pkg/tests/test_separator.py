import pytest
import torch

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import ModelConfig, SsdDims, Stage2Input
from tsbsmamba.services.separator import build_model, force_identity, forward, separate, zero_heads
from tsbsmamba.services.spectral import stft


def test_output_shapes(toy_cfg, toy_model):
    spec = stft(torch.randn(2, 512), toy_cfg.stft)
    result = forward(spec, toy_model)
    expected = (4, 2, 16, spec.n_frames)
    assert tuple(result.stage1_specs.shape) == expected
    assert tuple(result.stage2_specs.shape) == expected
    assert result.sources == ["vocals", "bass", "drums", "other"]


def test_identity_configuration_returns_mixture(f64, toy_cfg, toy_model):
    force_identity(toy_model)
    spec = stft(torch.randn(2, 400), toy_cfg.stft)
    result = forward(spec, toy_model)
    for stage in (1, 2):
        assert torch.equal(result.stage_specs(stage), spec.data.unsqueeze(0).expand(4, -1, -1, -1))


def test_identity_waveforms_match_input(f64, toy_cfg, toy_model):
    force_identity(toy_model)
    wave = torch.rand(2, 1000) * 2 - 1
    result = separate(wave, toy_model)
    assert result.stage2_waves.shape == (4, 2, 1000)
    assert (result.stage2_waves - wave).abs().max() / wave.abs().max() < 1e-5


def test_stage1_masks_ignore_positive_scaling(f64, toy_cfg, toy_model):
    # Band-split normalization cancels the scale up to its eps, so keep the
    # input loud.
    spec = stft(100.0 * torch.randn(2, 400, generator=torch.Generator().manual_seed(3)), toy_cfg.stft)
    base = forward(spec, toy_model).stage1_specs
    scaled = forward(spec.model_copy(update={"data": 3.0 * spec.data}), toy_model).stage1_specs
    assert torch.allclose(scaled / 3.0, base, rtol=1e-6, atol=1e-6 * float(base.abs().max()))


def test_zero_heads_silence_everything(toy_cfg, toy_model):
    zero_heads(toy_model)
    result = separate(torch.randn(2, 300), toy_model)
    assert torch.count_nonzero(result.stage1_waves) == 0
    assert torch.count_nonzero(result.stage2_waves) == 0


def test_stage2_can_consume_stage1_sum(f64, toy_cfg):
    model = force_identity(build_model(toy_cfg.model_copy(update={"stage2_input": Stage2Input.STAGE1_SUM}), seed=0))
    spec = stft(torch.randn(2, 300), toy_cfg.stft)
    result = forward(spec, model)
    assert torch.equal(result.stage2_specs[0], spec.data)


def test_batched_input(toy_cfg, toy_model):
    result = separate(torch.randn(3, 2, 256), toy_model)
    assert result.stage2_waves.shape == (3, 4, 2, 256)


def test_configurable_sources(toy_cfg):
    model = build_model(toy_cfg.model_copy(update={"sources": ["a", "b"]}), seed=0)
    assert separate(torch.randn(2, 200), model).stage1_waves.shape == (2, 2, 200)


def test_short_or_mismatched_inputs_raise(toy_cfg, toy_model):
    with pytest.raises(ShapeMismatchError):
        separate(torch.randn(2, 10), toy_model)
    other = ModelConfig.toy().stft.model_copy(update={"hop": 4})
    with pytest.raises(ShapeMismatchError):
        forward(stft(torch.randn(2, 200), other), toy_model)


def test_default_shapes_on_one_second():
    cfg = ModelConfig(N=8, layers_stage1=1, layers_stage2=1,
                      ssd=SsdDims(d_model=8, d_state=4, expand=2, headdim=4))
    model = build_model(cfg, seed=0)
    with torch.no_grad():
        result = forward(stft(torch.randn(2, 44100), cfg.stft), model)
    assert tuple(result.stage2_specs.shape) == (4, 2, 1025, 87)
