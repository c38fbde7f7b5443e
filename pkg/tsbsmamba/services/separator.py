"""
Two-stage separator: complex masking, fusion, residual refinement.
"""
from typing import Optional, Tuple

import torch
import torch.nn as nn

from tsbsmamba.core.config import get_settings
from tsbsmamba.core.exceptions import SeparationError, ShapeMismatchError
from tsbsmamba.models.config_models import ModelConfig, Stage2Input
from tsbsmamba.models.result_models import ComplexSpectrogram, SeparationResult
from tsbsmamba.services.bands import BandMerge, BandSplit
from tsbsmamba.services.dualnet import DualNet, Fusion
from tsbsmamba.services.spectral import istft, stft
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


class TSBSMamba2(nn.Module):
    """
    Stage 1 estimates one complex mask per source and applies it to the
    mixture. Stage 2 fuses the stage-1 DualNet output with a fresh band split,
    runs its own DualNet and adds one complex residual per source.
    """

    def __init__(self, cfg: ModelConfig, check_finite: Optional[bool] = None):
        super().__init__()
        if check_finite is None:
            check_finite = get_settings().check_finite
        self.cfg = cfg
        scheme = cfg.scheme
        merge_args = dict(
            scheme=scheme,
            n_sources=cfg.n_sources,
            n_features=cfg.N,
            hidden=cfg.hidden,
            hidden_layers=cfg.merge_hidden_layers,
            eps=cfg.norm_eps,
        )

        self.split1 = BandSplit(scheme, cfg.N, eps=cfg.norm_eps)
        self.dual1 = DualNet(cfg, cfg.layers_stage1, check_finite, name="stage1")
        self.masks = BandMerge(**merge_args)

        self.split2 = BandSplit(scheme, cfg.N, eps=cfg.norm_eps)
        self.fusion = Fusion(cfg.N)
        self.dual2 = DualNet(cfg, cfg.layers_stage2, check_finite, name="stage2")
        self.residuals = BandMerge(**merge_args)

        logger.info(
            f"Built separator: N={cfg.N}, K={scheme.n_bands}, layers={cfg.layers_stage1}+{cfg.layers_stage2}, "
            f"sources={cfg.sources}, params={sum(p.numel() for p in self.parameters())}"
        )

    def forward(self, mixture: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            mixture: Complex spectrogram [..., 2, F, T]

        Returns:
            (stage-1 estimates, stage-2 estimates), each [..., source, 2, F, T]
        """
        try:
            z1 = self.split1(mixture)
            d1 = self.dual1(z1)
            masks = self.masks(d1)
        except SeparationError as e:
            raise type(e)(f"stage 1: {e}") from e
        stage1 = masks * mixture.unsqueeze(-4)

        try:
            if self.cfg.stage2_input == Stage2Input.STAGE1_SUM:
                z2 = self.split2(stage1.sum(dim=-4))
            else:
                z2 = self.split2(mixture)
            q2 = self.dual2(self.fusion(d1, z2))
            residuals = self.residuals(q2)
        except SeparationError as e:
            raise type(e)(f"stage 2: {e}") from e
        return stage1, stage1 + residuals


def build_model(cfg: ModelConfig, seed: Optional[int] = None, check_finite: Optional[bool] = None) -> TSBSMamba2:
    """Instantiate the separator, seeding torch first when `seed` is given."""
    if seed is not None:
        torch.manual_seed(seed)
    return TSBSMamba2(cfg, check_finite=check_finite)


def forward(spec: ComplexSpectrogram, model: TSBSMamba2) -> SeparationResult:
    """Spectrogram-domain separation of a stereo mixture."""
    cfg = model.cfg
    if spec.cfg != cfg.stft:
        raise ShapeMismatchError(f"spectrogram STFT config {spec.cfg} differs from the model's {cfg.stft}")
    if spec.data.dim() < 3 or spec.data.shape[-3] != 2 or spec.n_bins != cfg.stft.n_bins:
        raise ShapeMismatchError(
            f"expected a stereo spectrogram [..., 2, {cfg.stft.n_bins}, T], got {tuple(spec.data.shape)}"
        )
    stage1, stage2 = model(spec.data)
    return SeparationResult(sources=list(cfg.sources), stage1_specs=stage1, stage2_specs=stage2)


def separate(wave: torch.Tensor, model: TSBSMamba2) -> SeparationResult:
    """
    Waveform-in, waveform-out separation.

    Args:
        wave: Stereo samples [..., 2, L] with L >= n_fft
        model: Separator

    Returns:
        SeparationResult with spectrograms and waveforms trimmed to L
    """
    cfg = model.cfg
    n_samples = wave.shape[-1]
    if n_samples < cfg.stft.n_fft:
        raise ShapeMismatchError(f"input has {n_samples} samples, at least n_fft={cfg.stft.n_fft} required")
    result = forward(stft(wave, cfg.stft), model)
    result.stage1_waves = istft(ComplexSpectrogram(data=result.stage1_specs, cfg=cfg.stft), n_samples)
    result.stage2_waves = istft(ComplexSpectrogram(data=result.stage2_specs, cfg=cfg.stft), n_samples)
    return result


@torch.no_grad()
def _set_head_output(merge: BandMerge, value_re: float) -> None:
    for head in merge.heads:
        for layer in head.output_layers:
            layer.weight.zero_()
            layer.bias.zero_()
            if value_re:
                # First half feeds the GLU values; even slots are real parts
                half = layer.bias.shape[0] // 2
                layer.bias[:half:2] = value_re


def force_identity(model: TSBSMamba2) -> TSBSMamba2:
    """
    Stage-1 masks become exactly 1+0j and stage-2 residuals exactly 0.

    A GLU value of 2 behind a gate input of 0 gives 2 * sigmoid(0) = 1.
    """
    _set_head_output(model.masks, 2.0)
    _set_head_output(model.residuals, 0.0)
    logger.info("Separator forced to identity (mask 1, residual 0)")
    return model


def zero_heads(model: TSBSMamba2) -> TSBSMamba2:
    """Mask 0 and residual 0: every estimate is silent."""
    _set_head_output(model.masks, 0.0)
    _set_head_output(model.residuals, 0.0)
    return model
