from typing import Dict, List, Optional

import numpy as np
import torch
from pydantic import BaseModel, Field

from tsbsmamba.models.config_models import StftConfig


class ComplexSpectrogram(BaseModel):
    """Complex T-F representation, data indexed [..., channel, bin, frame]."""
    model_config = {"protected_namespaces": (), "arbitrary_types_allowed": True}

    data: torch.Tensor
    cfg: StftConfig

    @property
    def n_bins(self) -> int:
        return self.data.shape[-2]

    @property
    def n_frames(self) -> int:
        return self.data.shape[-1]


class SeparationResult(BaseModel):
    """
    Per-source estimates of both stages.

    Spectrograms are [..., source, channel, bin, frame]; waveforms are
    [..., source, channel, sample] and only present after `separate`.
    """
    model_config = {"protected_namespaces": (), "arbitrary_types_allowed": True}

    sources: List[str]
    stage1_specs: torch.Tensor
    stage2_specs: torch.Tensor
    stage1_waves: Optional[torch.Tensor] = None
    stage2_waves: Optional[torch.Tensor] = None

    def stage_specs(self, stage: int) -> torch.Tensor:
        return self.stage1_specs if stage == 1 else self.stage2_specs

    def stage_waves(self, stage: int) -> Optional[torch.Tensor]:
        return self.stage1_waves if stage == 1 else self.stage2_waves


class SourceLoss(BaseModel):
    """Loss components of one source in one stage."""
    model_config = {"protected_namespaces": ()}

    source: str
    stage: int
    freq_real: float = Field(ge=0.0)
    freq_imag: float = Field(ge=0.0)
    time: float = Field(ge=0.0)


class LossReport(BaseModel):
    """Two-stage objective; the tensors keep the graph for backward."""
    model_config = {"protected_namespaces": (), "arbitrary_types_allowed": True}

    stage1: torch.Tensor
    stage2: torch.Tensor
    total: torch.Tensor
    per_source_per_stage: List[SourceLoss] = Field(default_factory=list)

    def as_floats(self) -> Dict[str, float]:
        return {
            "stage1": float(self.stage1.detach()),
            "stage2": float(self.stage2.detach()),
            "total": float(self.total.detach()),
        }


class Segment(BaseModel):
    """A window of a track kept by the activity detector."""
    model_config = {"protected_namespaces": (), "arbitrary_types_allowed": True}

    song: int
    offset: int  # first sample in the original track
    audio: np.ndarray  # [channel, sample]


class ChunkScore(BaseModel):
    """One row of the chunk-level audit table."""
    model_config = {"protected_namespaces": ()}

    song: str
    source: str
    chunk: int
    sdr: Optional[float] = None  # None when the reference chunk is silent
    skipped: bool = False


class SdrReport(BaseModel):
    """uSDR / cSDR per source plus the chunk audit table."""
    model_config = {"protected_namespaces": ()}

    usdr: Dict[str, float]
    csdr: Dict[str, float]
    chunks: List[ChunkScore] = Field(default_factory=list)

    @property
    def usdr_mean(self) -> float:
        return float(np.mean(list(self.usdr.values())))

    @property
    def csdr_mean(self) -> float:
        return float(np.mean(list(self.csdr.values())))


class StitchedSeparation(BaseModel):
    """Full-length waveforms from segmented inference, [source, channel, sample]."""
    model_config = {"protected_namespaces": (), "arbitrary_types_allowed": True}

    sources: List[str]
    stage1: torch.Tensor
    stage2: torch.Tensor
    n_segments: int

    def stage(self, stage: int) -> torch.Tensor:
        return self.stage1 if stage == 1 else self.stage2


class HeldOutEvaluation(BaseModel):
    """SDR of a separator on seeded synthetic songs next to the mixture-as-estimate baseline."""

    seed: int
    stage: int
    separated: SdrReport
    baseline: SdrReport

    @property
    def improvement(self) -> float:
        """Mean uSDR gain over the baseline, in dB."""
        return self.separated.usdr_mean - self.baseline.usdr_mean
