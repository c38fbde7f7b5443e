"""
Band-split encoder and band-merge decoder heads.

Feature tensors are laid out [..., channel, band, frame, feature]: the feature
axis is last so every per-band affine map is a plain nn.Linear.
"""
import math
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from tsbsmamba.core.exceptions import ShapeMismatchError
from tsbsmamba.models.config_models import BandScheme
from tsbsmamba.models.result_models import ComplexSpectrogram
from tsbsmamba.services.layers import FeatureNorm
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

# (upper edge in Hz, band width in Hz) at 44.1 kHz / 2048-point STFT;
# everything above the last edge becomes one final band.
_HZ_REGIONS = [
    (1000, 50),
    (2000, 100),
    (4000, 250),
    (8000, 500),
    (16000, 1000),
    (20000, 2000),
]
_TEMPLATE_RATE = 44100
_TEMPLATE_NFFT = 2048


def _template_widths() -> List[int]:
    bin_hz = _TEMPLATE_RATE / _TEMPLATE_NFFT
    widths: List[int] = []
    lower = 0
    for upper, bandwidth in _HZ_REGIONS:
        count = round((upper - lower) / bandwidth)
        widths += [max(1, round(bandwidth / bin_hz))] * count
        lower = upper
    total = _TEMPLATE_NFFT // 2 + 1
    widths.append(total - sum(widths))
    return widths


DEFAULT_WIDTHS = _template_widths()  # 57 bands over 1025 bins


def default_band_scheme(n_bins: int) -> BandScheme:
    """
    The 57-band scheme, rescaled when `n_bins` differs from 1025.

    Widths stay monotonically non-decreasing with frequency and always sum
    to `n_bins`.

    Args:
        n_bins: Number of frequency bins F

    Returns:
        BandScheme with 57 bands

    Raises:
        ValueError: If F is smaller than the band count
    """
    template = DEFAULT_WIDTHS
    n_bands = len(template)
    if n_bins < n_bands:
        raise ValueError(f"{n_bins} bins cannot hold {n_bands} bands")
    reference = sum(template)
    if n_bins == reference:
        return BandScheme(widths=list(template))

    widths = [max(1, math.floor(w * n_bins / reference)) for w in template]
    while sum(widths) > n_bins:
        # Shrinking the first widest band keeps the sequence non-decreasing
        widths[widths.index(max(widths))] -= 1
    widths[-1] += n_bins - sum(widths)
    logger.debug(f"Rescaled default band scheme to {n_bins} bins: {widths}")
    return BandScheme(widths=widths)


def interleave_bins(band: torch.Tensor) -> torch.Tensor:
    """Complex [..., G, T] -> real [..., T, 2G] as (re0, im0, re1, im1, ...)."""
    parts = torch.view_as_real(band)  # [..., G, T, 2]
    parts = parts.transpose(-3, -2)  # [..., T, G, 2]
    return parts.reshape(*parts.shape[:-2], -1)


def deinterleave_bins(values: torch.Tensor) -> torch.Tensor:
    """Real [..., T, 2G] -> complex [..., G, T]; inverse of interleave_bins."""
    pairs = values.reshape(*values.shape[:-1], -1, 2)  # [..., T, G, 2]
    band = torch.complex(pairs[..., 0], pairs[..., 1])
    return band.transpose(-2, -1)


class BandSplit(nn.Module):
    """Per-band normalization and affine projection to N features."""

    def __init__(self, scheme: BandScheme, n_features: int, eps: float = 1e-5):
        super().__init__()
        self.scheme = scheme
        self.n_features = n_features
        self.norms = nn.ModuleList([FeatureNorm(2 * g, eps=eps) for g in scheme.widths])
        self.fcs = nn.ModuleList([nn.Linear(2 * g, n_features) for g in scheme.widths])

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        """
        Args:
            spec: Complex spectrogram [..., channel, F, T]

        Returns:
            Features [..., channel, K, T, N]
        """
        self.scheme.check_bins(spec.shape[-2])
        bands = []
        for start, width, norm, fc in zip(self.scheme.offsets, self.scheme.widths, self.norms, self.fcs):
            features = interleave_bins(spec[..., start:start + width, :])
            bands.append(fc(norm(features)))
        return torch.stack(bands, dim=-3)


class BandMergeHead(nn.Module):
    """
    One source's decoder: per band, normalize over N, tanh MLP, GLU.

    The GLU output carries 2*G_k real values per channel, read back as G_k
    complex bins.
    """

    def __init__(
        self,
        scheme: BandScheme,
        n_features: int,
        hidden: int,
        hidden_layers: int = 2,
        eps: float = 1e-5,
    ):
        super().__init__()
        self.scheme = scheme
        self.n_features = n_features
        self.mlps = nn.ModuleList()
        for width in scheme.widths:
            layers: List[nn.Module] = [FeatureNorm(n_features, eps=eps), nn.Linear(n_features, hidden), nn.Tanh()]
            for _ in range(hidden_layers - 1):
                layers += [nn.Linear(hidden, hidden), nn.Tanh()]
            layers.append(nn.Linear(hidden, 2 * (2 * width)))
            self.mlps.append(nn.Sequential(*layers))

    @property
    def output_layers(self) -> List[nn.Linear]:
        """The final affine map of every band (feeds the GLU)."""
        return [mlp[-1] for mlp in self.mlps]

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """
        Args:
            features: [..., channel, K, T, N]

        Returns:
            Complex T-F tensor [..., channel, F, T]
        """
        if features.shape[-3] != self.scheme.n_bands or features.shape[-1] != self.n_features:
            raise ShapeMismatchError(
                f"merge head expects [..., {self.scheme.n_bands}, T, {self.n_features}], "
                f"got {tuple(features.shape)}"
            )
        bands = []
        for k, mlp in enumerate(self.mlps):
            gated = F.glu(mlp(features[..., k, :, :]), dim=-1)  # [..., T, 2G]
            bands.append(deinterleave_bins(gated))
        return torch.cat(bands, dim=-2)


class BandMerge(nn.Module):
    """Independent merge heads, one per source."""

    def __init__(
        self,
        scheme: BandScheme,
        n_sources: int,
        n_features: int,
        hidden: int,
        hidden_layers: int = 2,
        eps: float = 1e-5,
    ):
        super().__init__()
        self.heads = nn.ModuleList(
            [BandMergeHead(scheme, n_features, hidden, hidden_layers, eps) for _ in range(n_sources)]
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Stack of all heads: [..., source, channel, F, T]."""
        return torch.stack([head(features) for head in self.heads], dim=-4)


def band_split(spec: ComplexSpectrogram, scheme: BandScheme, params: BandSplit) -> torch.Tensor:
    """Encode a spectrogram into band features [..., channel, K, T, N]."""
    if params.scheme.widths != scheme.widths:
        raise ShapeMismatchError("band split parameters were built for a different scheme")
    return params(spec.data)


def band_merge_head(features: torch.Tensor, params: BandMerge, source: int) -> torch.Tensor:
    """Decode features with head `source` into a complex [..., channel, F, T] tensor."""
    if not 0 <= source < len(params.heads):
        raise ShapeMismatchError(f"source index {source} out of range for {len(params.heads)} heads")
    return params.heads[source](features)
