import torch
import torch.nn as nn

from tsbsmamba.core.exceptions import ShapeMismatchError


class FeatureNorm(nn.Module):
    """
    Single-group GroupNorm over the last axis.

    Every leading index (channel, band, frame, ...) is normalized on its own,
    with a learned gain and bias per feature.
    """

    def __init__(self, n_features: int, eps: float = 1e-5):
        super().__init__()
        self.n_features = n_features
        self.norm = nn.GroupNorm(1, n_features, eps=eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.n_features:
            raise ShapeMismatchError(f"FeatureNorm expects {self.n_features} features, got {x.shape[-1]}")
        lead = x.shape[:-1]
        return self.norm(x.reshape(-1, self.n_features)).reshape(*lead, self.n_features)


class RMSNormGated(nn.Module):
    """RMS normalization of y * silu(z) with a learned gain."""

    def __init__(self, n_features: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(n_features))

    def forward(self, y: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        y = y * nn.functional.silu(z)
        scale = torch.rsqrt(y.pow(2).mean(dim=-1, keepdim=True) + self.eps)
        return y * scale * self.weight
