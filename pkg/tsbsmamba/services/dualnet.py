"""
BMAMBA2-DualNet and the stage fusion module.

Features are [..., channel, band, frame, feature]. Each DualNet layer runs a
residual BMamba2 layer along frames, then along bands, then TAC across the
two stereo channels.
"""
from typing import List

import torch
import torch.nn as nn

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import ModelConfig
from tsbsmamba.services.layers import FeatureNorm
from tsbsmamba.services.ssd import BMamba2Block
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


class ResidualBMamba2(nn.Module):
    """out = seq + FC(BMamba2(norm(seq)))"""

    def __init__(self, cfg: ModelConfig, check_finite: bool = True, name: str = "residual"):
        super().__init__()
        self.n_features = cfg.N
        self.norm = FeatureNorm(cfg.N, eps=cfg.norm_eps)
        self.bmamba = BMamba2Block(
            cfg.ssd,
            name=name,
            discretization=cfg.discretization,
            scan_mode=cfg.scan_mode,
            dt_min=cfg.dt_min,
            dt_max=cfg.dt_max,
            dt_floor=cfg.dt_floor,
            a_init_range=cfg.a_init_range,
            eps=cfg.norm_eps,
            check_finite=check_finite,
        )
        self.fc = nn.Linear(2 * cfg.N, cfg.N)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        """[..., L, N] -> [..., L, N]"""
        if seq.shape[-1] != self.n_features:
            raise ShapeMismatchError(f"residual layer expects {self.n_features} features, got {seq.shape[-1]}")
        return seq + self.fc(self.bmamba(self.norm(seq)))


class TAC(nn.Module):
    """Transform-average-concatenate across the stereo pair."""

    def __init__(self, n_features: int, prelu_init: float = 0.25):
        super().__init__()
        hidden = 3 * n_features
        self.transform = nn.Sequential(nn.Linear(n_features, hidden), nn.PReLU(init=prelu_init))
        self.average = nn.Sequential(nn.Linear(hidden, hidden), nn.PReLU(init=prelu_init))
        self.concat = nn.Sequential(nn.Linear(2 * hidden, n_features), nn.PReLU(init=prelu_init))

    def forward(self, channels: torch.Tensor) -> torch.Tensor:
        """[..., 2, N] -> [..., 2, N]"""
        if channels.dim() < 2 or channels.shape[-2] != 2:
            raise ShapeMismatchError(f"TAC needs exactly 2 channels, got shape {tuple(channels.shape)}")
        hidden = self.transform(channels)
        shared = self.average(hidden.mean(dim=-2, keepdim=True)).expand_as(hidden)
        return channels + self.concat(torch.cat([hidden, shared], dim=-1))


class DualNetLayer(nn.Module):
    """Time layer, band layer, TAC."""

    def __init__(self, cfg: ModelConfig, check_finite: bool = True, name: str = "dualnet"):
        super().__init__()
        self.time_layer = ResidualBMamba2(cfg, check_finite, name=f"{name}.time")
        self.band_layer = ResidualBMamba2(cfg, check_finite, name=f"{name}.band")
        self.tac = TAC(cfg.N, prelu_init=cfg.prelu_init)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        # Along frames: [..., C, K, T, N] already has T next to N
        z = self.time_layer(z)
        # Along bands
        z = self.band_layer(z.transpose(-3, -2)).transpose(-3, -2)
        # Across channels: move C next to N
        moved = z.movedim(-4, -2)  # [..., K, T, C, N]
        return self.tac(moved).movedim(-2, -4)


class DualNet(nn.Module):
    """A stack of DualNet layers."""

    def __init__(self, cfg: ModelConfig, n_layers: int, check_finite: bool = True, name: str = "dualnet"):
        super().__init__()
        self.n_features = cfg.N
        self.layers = nn.ModuleList(
            [DualNetLayer(cfg, check_finite, name=f"{name}.{i}") for i in range(n_layers)]
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """[..., 2, K, T, N] -> same shape"""
        if z.dim() < 4 or z.shape[-4] != 2 or z.shape[-1] != self.n_features:
            raise ShapeMismatchError(f"DualNet expects [..., 2, K, T, {self.n_features}], got {tuple(z.shape)}")
        for layer in self.layers:
            z = layer(z)
        return z


class Fusion(nn.Module):
    """
    tanh(FC([D1 ; D2])) reducing 2N features back to N.

    tanh rounds to exactly +-1 for large inputs in finite precision, so the
    output is clamped one epsilon inside the open interval.
    """

    def __init__(self, n_features: int):
        super().__init__()
        self.fc = nn.Linear(2 * n_features, n_features)

    def forward(self, d1: torch.Tensor, d2: torch.Tensor) -> torch.Tensor:
        if d1.shape != d2.shape:
            raise ShapeMismatchError(f"fusion inputs differ: {tuple(d1.shape)} vs {tuple(d2.shape)}")
        out = torch.tanh(self.fc(torch.cat([d1, d2], dim=-1)))
        limit = 1.0 - torch.finfo(out.dtype).eps
        return out.clamp(-limit, limit)


def residual_layer(seq: torch.Tensor, p: ResidualBMamba2) -> torch.Tensor:
    return p(seq)


def dualnet_forward(z: torch.Tensor, layers: List[DualNetLayer]) -> torch.Tensor:
    for layer in layers:
        z = layer(z)
    return z


def tac_forward(channels: torch.Tensor, p: TAC) -> torch.Tensor:
    return p(channels)


def fusion(d1: torch.Tensor, d2: torch.Tensor, p: Fusion) -> torch.Tensor:
    return p(d1, d2)
