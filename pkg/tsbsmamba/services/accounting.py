"""
Closed-form parameter and multiply-accumulate accounting.

Counts are computed from the configuration alone so that large presets can be
inspected without allocating them. MACs cover every affine map, the depthwise
convolutions and the SSD recurrences; STFT, normalization and pointwise
nonlinearities are not counted.
"""
from typing import Dict

from pydantic import BaseModel

from tsbsmamba.models.config_models import ModelConfig, SsdDims


class StageCounts(BaseModel):
    """Parameters and MACs (for the requested duration) of one stage."""
    params: int
    macs: int


class CostReport(BaseModel):
    stage1: StageCounts
    stage2: StageCounts
    seconds: float

    @property
    def params(self) -> int:
        return self.stage1.params + self.stage2.params

    @property
    def macs(self) -> int:
        return self.stage1.macs + self.stage2.macs

    @property
    def gmacs_per_second(self) -> float:
        return self.macs / self.seconds / 1e9


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def _mamba2_params(dims: SsdDims) -> int:
    d_in_proj = 2 * dims.d_inner + 2 * dims.d_state + dims.n_heads
    conv_dim = dims.d_inner + 2 * dims.d_state
    return (
        dims.d_model * d_in_proj            # in_proj (no bias)
        + conv_dim * dims.d_conv + conv_dim  # depthwise conv
        + 3 * dims.n_heads                  # dt_bias, A_log, D
        + dims.d_inner                      # gated RMS norm
        + dims.d_inner * dims.d_model       # out_proj (no bias)
    )


def _residual_params(cfg: ModelConfig) -> int:
    n = cfg.N
    return 2 * n + 2 * _mamba2_params(cfg.ssd) + (2 * n * n + n)


def _tac_params(cfg: ModelConfig) -> int:
    n, h = cfg.N, 3 * cfg.N
    return (n * h + h + 1) + (h * h + h + 1) + (2 * h * n + n + 1)


def _dualnet_layer_params(cfg: ModelConfig) -> int:
    return 2 * _residual_params(cfg) + _tac_params(cfg)


def _band_split_params(cfg: ModelConfig) -> int:
    return sum(2 * (2 * g) + 2 * g * cfg.N + cfg.N for g in cfg.scheme.widths)


def _merge_head_params(cfg: ModelConfig) -> int:
    n, h = cfg.N, cfg.hidden
    per_band_fixed = 2 * n + (n * h + h) + (cfg.merge_hidden_layers - 1) * (h * h + h)
    return sum(per_band_fixed + h * 4 * g + 4 * g for g in cfg.scheme.widths)


def param_breakdown(cfg: ModelConfig) -> Dict[str, int]:
    """Parameter count of every building block of the separator."""
    heads = cfg.n_sources * _merge_head_params(cfg)
    return {
        "stage1.band_split": _band_split_params(cfg),
        "stage1.dualnet": cfg.layers_stage1 * _dualnet_layer_params(cfg),
        "stage1.masks": heads,
        "stage2.band_split": _band_split_params(cfg),
        "stage2.fusion": 2 * cfg.N * cfg.N + cfg.N,
        "stage2.dualnet": cfg.layers_stage2 * _dualnet_layer_params(cfg),
        "stage2.residuals": heads,
    }


def count_params(cfg: ModelConfig) -> int:
    """Total trainable parameters; equals the size of an instantiated model."""
    return sum(param_breakdown(cfg).values())


# ---------------------------------------------------------------------------
# MACs
# ---------------------------------------------------------------------------

def _mamba2_macs_per_token(dims: SsdDims) -> int:
    d_in_proj = 2 * dims.d_inner + 2 * dims.d_state + dims.n_heads
    conv_dim = dims.d_inner + 2 * dims.d_state
    return (
        dims.d_model * d_in_proj
        + conv_dim * dims.d_conv
        + 3 * dims.d_inner * dims.d_state  # state decay, input outer product, readout
        + dims.d_inner                     # skip term
        + dims.d_inner * dims.d_model
    )


def _dualnet_layer_macs(cfg: ModelConfig, tokens: int, pairs: int) -> int:
    n = cfg.N
    residual = 2 * _mamba2_macs_per_token(cfg.ssd) + 2 * n * n
    tac = tokens * (n * 3 * n + 6 * n * n) + pairs * (3 * n) * (3 * n)
    return 2 * tokens * residual + tac


def _stage_macs(cfg: ModelConfig, n_frames: int, n_layers: int, fused: bool) -> int:
    n, h = cfg.N, cfg.hidden
    widths = cfg.scheme.widths
    tokens = 2 * len(widths) * n_frames
    pairs = len(widths) * n_frames

    split = 2 * n_frames * sum(2 * g * n for g in widths)
    dualnet = n_layers * _dualnet_layer_macs(cfg, tokens, pairs)
    head = 2 * n_frames * sum(
        n * h + (cfg.merge_hidden_layers - 1) * h * h + h * 4 * g for g in widths
    )
    fusion = tokens * 2 * n * n if fused else 0
    return split + dualnet + cfg.n_sources * head + fusion


def cost_report(cfg: ModelConfig, seconds: float = 1.0) -> CostReport:
    """Per-stage parameters and MACs for `seconds` of stereo audio."""
    if seconds <= 0:
        raise ValueError(f"duration must be positive, got {seconds}")
    n_frames = cfg.stft.n_frames(round(seconds * cfg.stft.sample_rate))
    breakdown = param_breakdown(cfg)
    stage1_params = sum(v for k, v in breakdown.items() if k.startswith("stage1."))
    stage2_params = sum(v for k, v in breakdown.items() if k.startswith("stage2."))
    return CostReport(
        stage1=StageCounts(
            params=stage1_params,
            macs=_stage_macs(cfg, n_frames, cfg.layers_stage1, fused=False),
        ),
        stage2=StageCounts(
            params=stage2_params,
            macs=_stage_macs(cfg, n_frames, cfg.layers_stage2, fused=True),
        ),
        seconds=seconds,
    )


def estimate_macs(cfg: ModelConfig, seconds: float = 1.0) -> int:
    """Total multiply-accumulates to separate `seconds` of audio."""
    return cost_report(cfg, seconds).macs
