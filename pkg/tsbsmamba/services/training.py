"""
Two-stage objective, optimizer step and the training loop.
"""
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel
from torch.optim.lr_scheduler import ReduceLROnPlateau

from tsbsmamba.core.exceptions import NonFiniteError, ShapeMismatchError
from tsbsmamba.models.config_models import OptimConfig, StftConfig, TrainingConfig
from tsbsmamba.models.result_models import ComplexSpectrogram, LossReport, SeparationResult, SourceLoss
from tsbsmamba.services.data import Pools, mix_batch, prepare_pools
from tsbsmamba.services.separator import TSBSMamba2, build_model, forward
from tsbsmamba.services.spectral import istft, stft
from tsbsmamba.utils.checkpoint import optimizer_tensors, save_checkpoint
from tsbsmamba.utils.exports import TrainingLog
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

# Validation batches draw from a seed range training never reaches
_VALIDATION_SEED = 2 ** 62


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _components(
    est: torch.Tensor, ref: torch.Tensor, stft_cfg: StftConfig, length: Optional[int]
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Per-source (real, imaginary, waveform) mean absolute errors, each [S]."""
    if est.shape != ref.shape:
        raise ShapeMismatchError(f"estimate {tuple(est.shape)} and reference {tuple(ref.shape)} differ")
    if est.dim() < 4:
        raise ShapeMismatchError(f"expected [..., source, channel, F, T], got {tuple(est.shape)}")
    if length is None:
        length = stft_cfg.hop * (est.shape[-1] - 1)

    diff = est - ref
    # Average over everything except the source axis
    source_first = lambda t: t.movedim(-4, 0).reshape(t.shape[-4], -1)
    freq_real = source_first(diff.real).abs().mean(dim=1)
    freq_imag = source_first(diff.imag).abs().mean(dim=1)
    # istft is linear, so the difference of waveforms is the waveform of the difference
    wave_diff = istft(ComplexSpectrogram(data=diff.movedim(-4, 0), cfg=stft_cfg), length)
    time = wave_diff.reshape(wave_diff.shape[0], -1).abs().mean(dim=1)
    return freq_real, freq_imag, time


def stage_loss(est: torch.Tensor, ref: torch.Tensor, stft_cfg: StftConfig, length: Optional[int] = None) -> torch.Tensor:
    """
    Frequency- and time-domain mean absolute error summed over sources.

    Args:
        est: Complex estimates [..., source, 2, F, T]
        ref: Complex references of the same shape
        stft_cfg: STFT used for the waveform term
        length: Waveform length for the inverse STFT (default hop*(T-1))
    """
    freq_real, freq_imag, time = _components(est, ref, stft_cfg, length)
    return (freq_real + freq_imag + time).sum()


def total_loss(
    result: SeparationResult, refs: torch.Tensor, stft_cfg: StftConfig, length: Optional[int] = None
) -> LossReport:
    """Stage-1 plus stage-2 loss with a per-source breakdown."""
    stage_terms = []
    breakdown: List[SourceLoss] = []
    for stage in (1, 2):
        freq_real, freq_imag, time = _components(result.stage_specs(stage), refs, stft_cfg, length)
        stage_terms.append((freq_real + freq_imag + time).sum())
        for i, source in enumerate(result.sources):
            breakdown.append(
                SourceLoss(
                    source=source,
                    stage=stage,
                    freq_real=float(freq_real[i].detach()),
                    freq_imag=float(freq_imag[i].detach()),
                    time=float(time[i].detach()),
                )
            )
    stage1, stage2 = stage_terms
    return LossReport(stage1=stage1, stage2=stage2, total=stage1 + stage2, per_source_per_stage=breakdown)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class OptimState(BaseModel):
    """Scalar optimizer bookkeeping; moments live in the torch optimizer."""
    model_config = {"protected_namespaces": ()}

    step: int = 0
    lr: float
    clip_norm: float
    skipped_steps: int = 0
    last_grad_norm: float = 0.0


def build_optimizer(
    params: Iterable[torch.nn.Parameter], cfg: OptimConfig
) -> Tuple[torch.optim.Adam, ReduceLROnPlateau, OptimState]:
    """Adam with the configured betas and a plateau scheduler on validation loss."""
    optimizer = torch.optim.Adam(list(params), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
    # torch decays once the bad-epoch count exceeds `patience`
    scheduler = ReduceLROnPlateau(
        optimizer, mode="min", factor=cfg.decay, patience=cfg.patience - 1, threshold=0.0, cooldown=0
    )
    return optimizer, scheduler, OptimState(lr=cfg.lr, clip_norm=cfg.clip_norm)


def clip_and_step(optimizer: torch.optim.Optimizer, state: OptimState) -> bool:
    """
    Clip the global gradient norm and apply one Adam update.

    Returns:
        False if the gradients were non-finite and the step was skipped
    """
    params = [p for group in optimizer.param_groups for p in group["params"] if p.grad is not None]
    grad_norm = torch.nn.utils.clip_grad_norm_(params, state.clip_norm)
    state.last_grad_norm = float(grad_norm)
    if not math.isfinite(state.last_grad_norm):
        logger.warning(f"Skipping step {state.step + 1}: non-finite gradient norm")
        optimizer.zero_grad(set_to_none=False)
        state.skipped_steps += 1
        return False
    optimizer.step()
    state.step += 1
    return True


def lr_schedule(scheduler: ReduceLROnPlateau, state: OptimState, validation_loss: float) -> OptimState:
    """Feed one epoch's validation loss to the plateau rule and record the new lr."""
    scheduler.step(validation_loss)
    new_lr = scheduler.optimizer.param_groups[0]["lr"]
    if new_lr != state.lr:
        logger.info(f"Validation loss plateaued, lr {state.lr:.3g} -> {new_lr:.3g}")
    state.lr = new_lr
    return state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class TrainingSummary(BaseModel):
    steps: int
    epochs: int
    final_lr: float
    first_loss: float
    last_loss: float
    best_validation: float
    checkpoints: List[Path]


def to_spectrograms(waves: np.ndarray, stft_cfg: StftConfig) -> torch.Tensor:
    """numpy waveforms [..., 2, L] -> complex spectrogram tensor."""
    tensor = torch.as_tensor(waves, dtype=torch.get_default_dtype())
    return stft(tensor, stft_cfg).data


class Trainer:
    """
    Epoch loop: on-the-fly mixtures, two-stage loss, clipped Adam, plateau
    decay on validation loss and one checkpoint per epoch.
    """

    def __init__(self, cfg: TrainingConfig, output_dir: Path):
        self.cfg = cfg
        self.output_dir = Path(output_dir)
        self.model_cfg = cfg.model
        self.stft_cfg = cfg.model.stft
        self.model: TSBSMamba2 = build_model(cfg.model, seed=cfg.seed)
        self.optimizer, self.scheduler, self.state = build_optimizer(self.model.parameters(), cfg.optim)
        self.train_pools, self.valid_pools = prepare_pools(
            cfg.data, cfg.model.sources, self.stft_cfg.sample_rate, cfg.seed
        )
        self.log = TrainingLog(self.output_dir / "train_log.csv")

    def _batch(self, pools: Pools, seed: int) -> Tuple[torch.Tensor, torch.Tensor, int]:
        mixtures, stems = mix_batch(pools, self.cfg.batch_size, self.cfg.data.gain_db, seed, self.model_cfg.sources)
        return to_spectrograms(mixtures, self.stft_cfg), to_spectrograms(stems, self.stft_cfg), mixtures.shape[-1]

    def train_step(self, mixture: torch.Tensor, refs: torch.Tensor, length: int) -> LossReport:
        self.model.train()
        self.optimizer.zero_grad()
        report = total_loss(forward(ComplexSpectrogram(data=mixture, cfg=self.stft_cfg), self.model),
                            refs, self.stft_cfg, length)
        if not torch.isfinite(report.total):
            raise NonFiniteError("training loss", f"step {self.state.step + 1}")
        report.total.backward()
        clip_and_step(self.optimizer, self.state)
        return report

    @torch.no_grad()
    def validate(self) -> float:
        self.model.eval()
        losses = []
        for i in range(self.cfg.validation_batches):
            mixture, refs, length = self._batch(self.valid_pools, seed=_VALIDATION_SEED + i)
            result = forward(ComplexSpectrogram(data=mixture, cfg=self.stft_cfg), self.model)
            losses.append(float(total_loss(result, refs, self.stft_cfg, length).total))
        return float(np.mean(losses))

    def save(self, epoch: int, validation: float) -> Path:
        optim_arrays, optim_meta = optimizer_tensors(self.optimizer)
        tensors = dict(self.model.state_dict())
        tensors.update(optim_arrays)
        metadata = {
            "epoch": epoch,
            "step": self.state.step,
            "validation_loss": validation,
            "optimizer": optim_meta,
            "scheduler": self.scheduler.state_dict(),
        }
        return save_checkpoint(self.output_dir / "checkpoints" / f"epoch-{epoch:03d}.tsbm",
                               self.model_cfg, tensors, metadata)

    def train(self) -> TrainingSummary:
        cfg = self.cfg
        first_loss = last_loss = float("nan")
        best = float("inf")
        checkpoints: List[Path] = []
        logger.info(
            f"Training {cfg.epochs} epochs x {cfg.steps_per_epoch} steps, batch {cfg.batch_size}, "
            f"output {self.output_dir}"
        )
        for epoch in range(1, cfg.epochs + 1):
            for _ in range(cfg.steps_per_epoch):
                batch_seed = cfg.seed * 1_000_003 + self.state.step + self.state.skipped_steps
                mixture, refs, length = self._batch(self.train_pools, batch_seed)
                try:
                    report = self.train_step(mixture, refs, length)
                except NonFiniteError:
                    logger.error(
                        f"Aborting at epoch {epoch}: non-finite loss; last good checkpoint: "
                        f"{checkpoints[-1] if checkpoints else 'none'}"
                    )
                    raise
                losses = report.as_floats()
                if math.isnan(first_loss):
                    first_loss = losses["total"]
                last_loss = losses["total"]
                self.log.append({
                    "epoch": epoch,
                    "step": self.state.step + self.state.skipped_steps,
                    "lr": self.state.lr,
                    **losses,
                    "grad_norm": self.state.last_grad_norm,
                    "skipped": self.state.skipped_steps,
                })

            validation = self.validate()
            best = min(best, validation)
            lr_schedule(self.scheduler, self.state, validation)
            checkpoints.append(self.save(epoch, validation))
            logger.info(f"Epoch {epoch}: train loss {last_loss:.4f}, validation {validation:.4f}, lr {self.state.lr:.3g}")

        return TrainingSummary(
            steps=self.state.step,
            epochs=cfg.epochs,
            final_lr=self.state.lr,
            first_loss=first_loss,
            last_loss=last_loss,
            best_validation=best,
            checkpoints=checkpoints,
        )
