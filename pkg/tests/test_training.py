import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import DataConfig, ModelConfig, OptimConfig, TrainingConfig
from tsbsmamba.models.result_models import SeparationResult
from tsbsmamba.services.separator import separate
from tsbsmamba.services.spectral import stft
from tsbsmamba.services.training import Trainer, build_optimizer, clip_and_step, lr_schedule, stage_loss, total_loss
from tsbsmamba.utils.exports import read_rows

STFT = ModelConfig.toy().stft
SHAPE = (2, 2, STFT.n_bins, 9)  # [source, channel, F, T]


def _complex(generator, shape=SHAPE):
    return torch.complex(torch.randn(shape, generator=generator), torch.randn(shape, generator=generator))


def _result(stage1, stage2, sources=("a", "b")):
    return SeparationResult(sources=list(sources), stage1_specs=stage1, stage2_specs=stage2)


def test_loss_of_exact_estimate_is_zero(generator):
    ref = _complex(generator)
    assert float(stage_loss(ref, ref.clone(), STFT)) == 0.0


def test_single_cell_frequency_terms(generator):
    ref = torch.zeros(SHAPE, dtype=torch.complex64)
    est = ref.clone()
    est[0, 1, 3, 4] = 1.0
    report = total_loss(_result(est, ref), ref, STFT)
    cells = 2 * SHAPE[2] * SHAPE[3]
    first = report.per_source_per_stage[0]
    assert (first.source, first.stage) == ("a", 1)
    assert first.freq_real == pytest.approx(1 / cells)
    assert first.freq_imag == 0.0
    assert first.time > 0.0
    silent = report.per_source_per_stage[1]
    assert silent.freq_real == silent.freq_imag == silent.time == 0.0
    assert float(report.stage2) == 0.0


def test_loss_is_symmetric(generator):
    a, b = _complex(generator), _complex(generator)
    assert float(stage_loss(a, b, STFT)) == pytest.approx(float(stage_loss(b, a, STFT)), rel=1e-6)


def test_total_is_sum_of_stages(f64, generator):
    ref, s1, s2 = (_complex(generator) for _ in range(3))
    report = total_loss(_result(s1, s2), ref, STFT)
    values = report.as_floats()
    assert values["total"] == pytest.approx(values["stage1"] + values["stage2"], rel=1e-12)
    assert values["stage1"] == pytest.approx(float(stage_loss(s1, ref, STFT)), rel=1e-12)


def test_loss_shape_mismatch(generator):
    with pytest.raises(ShapeMismatchError):
        stage_loss(_complex(generator), _complex(generator, (1,) + SHAPE[1:]), STFT)


def _single_param(value):
    param = torch.nn.Parameter(torch.tensor(value))
    optimizer, scheduler, state = build_optimizer([param], OptimConfig())
    return param, optimizer, scheduler, state


def test_gradients_clipped_to_max_norm():
    param, optimizer, _, state = _single_param([0.0, 0.0])
    param.grad = torch.tensor([6.0, 8.0])
    assert clip_and_step(optimizer, state)
    assert state.last_grad_norm == pytest.approx(10.0)
    assert float(param.grad.norm()) == pytest.approx(5.0)


@given(grad=st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_clipped_norm_never_exceeds_limit(grad):
    param, optimizer, _, state = _single_param([0.0] * len(grad))
    param.grad = torch.tensor(grad)
    clip_and_step(optimizer, state)
    assert float(param.grad.norm()) <= 5.0 * (1 + 1e-5)
    if state.last_grad_norm <= 5.0:
        assert param.grad.tolist() == pytest.approx(grad)


def test_first_adam_step_moves_by_learning_rate():
    param, optimizer, _, state = _single_param([1.0, -2.0])
    param.grad = torch.tensor([0.5, -3.0])
    clip_and_step(optimizer, state)
    assert param.detach().tolist() == pytest.approx([1.0 - 1e-3, -2.0 + 1e-3], abs=1e-6)
    assert state.step == 1


def test_zero_gradients_leave_parameters_unchanged():
    param, optimizer, _, state = _single_param([1.0, 2.0])
    param.grad = torch.zeros(2)
    clip_and_step(optimizer, state)
    assert param.detach().tolist() == [1.0, 2.0]
    assert state.step == 1


def test_non_finite_gradients_skip_the_step():
    param, optimizer, _, state = _single_param([1.0])
    param.grad = torch.tensor([float("nan")])
    assert not clip_and_step(optimizer, state)
    assert param.detach().tolist() == [1.0]
    assert (state.step, state.skipped_steps) == (0, 1)


def test_plateau_decay():
    _, _, scheduler, state = _single_param([0.0])
    for loss in [1.0, 1.1, 1.2]:
        lr_schedule(scheduler, state, loss)
    assert state.lr == pytest.approx(8e-4)
    for loss in [1.3, 1.4]:
        lr_schedule(scheduler, state, loss)
    assert state.lr == pytest.approx(6.4e-4)


def test_improvement_keeps_learning_rate():
    _, _, scheduler, state = _single_param([0.0])
    for loss in [1.0, 0.9, 0.8, 0.7]:
        lr_schedule(scheduler, state, loss)
    assert state.lr == pytest.approx(1e-3)


def test_small_step_decreases_loss(f64, toy_cfg, toy_model, generator):
    wave = torch.randn(2, 256, generator=generator)
    refs = torch.randn(toy_cfg.n_sources, 2, 256, generator=generator)
    ref_specs = stft(refs, toy_cfg.stft).data
    optimizer, _, state = build_optimizer(toy_model.parameters(), OptimConfig(lr=1e-5))

    def loss():
        return total_loss(separate(wave, toy_model), ref_specs, toy_cfg.stft, 256).total

    before = loss()
    before.backward()
    clip_and_step(optimizer, state)
    assert float(loss()) < float(before)


def _tiny_training(seed: int = 0) -> TrainingConfig:
    return TrainingConfig(
        model=ModelConfig.toy(),
        data=DataConfig(n_songs=1, song_seconds=3.0, segment_seconds=0.25),
        epochs=2,
        steps_per_epoch=3,
        batch_size=2,
        validation_batches=1,
        seed=seed,
    )


def test_trainer_is_deterministic(tmp_path):
    first = Trainer(_tiny_training(), tmp_path / "a").train()
    second = Trainer(_tiny_training(), tmp_path / "b").train()
    assert first.first_loss == second.first_loss
    assert first.last_loss == second.last_loss
    assert first.steps == 6
    assert [p.name for p in first.checkpoints] == ["epoch-001.tsbm", "epoch-002.tsbm"]

    rows = read_rows(tmp_path / "a" / "train_log.csv")
    steps = [int(r["step"]) for r in rows]
    assert steps == sorted(steps) and len(set(steps)) == len(steps) == 6
    for row in rows:
        assert float(row["total"]) == pytest.approx(float(row["stage1"]) + float(row["stage2"]), rel=1e-5)
