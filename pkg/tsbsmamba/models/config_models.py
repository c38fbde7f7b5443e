from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from tsbsmamba.core.exceptions import ShapeMismatchError

DEFAULT_SOURCES = ["vocals", "bass", "drums", "other"]


class Discretization(str, Enum):
    """How B is discretized next to exp(ΔA)."""
    ZOH = "zoh"
    EULER_B = "euler-b"


class ScanMode(str, Enum):
    """SSD kernel used inside the Mamba-2 block."""
    CHUNKED = "chunked"
    SEQUENTIAL = "sequential"
    DUAL = "dual"


class Stage2Input(str, Enum):
    """What the second-stage band split consumes."""
    MIXTURE = "mixture"
    STAGE1_SUM = "stage1_sum"


class StftConfig(BaseModel):
    """STFT framing parameters."""
    model_config = {"protected_namespaces": (), "frozen": True}

    n_fft: int = Field(default=2048, gt=0)
    hop: int = Field(default=512, gt=0)
    window: Literal["hann"] = "hann"
    sample_rate: int = Field(default=44100, gt=0)
    center: bool = True

    @model_validator(mode="after")
    def _check_framing(self) -> "StftConfig":
        if self.n_fft % 2:
            raise ValueError(f"n_fft must be even, got {self.n_fft}")
        if self.hop > self.n_fft:
            raise ValueError(f"hop ({self.hop}) must not exceed n_fft ({self.n_fft})")
        return self

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        """Frame count produced for `n_samples` input samples."""
        if self.center:
            return n_samples // self.hop + 1
        return 1 + max(0, (n_samples - self.n_fft) // self.hop)


class BandScheme(BaseModel):
    """Partition of the frequency axis into contiguous sub-bands."""
    model_config = {"protected_namespaces": (), "frozen": True}

    widths: List[int] = Field(min_length=1)

    @model_validator(mode="after")
    def _check_widths(self) -> "BandScheme":
        bad = [w for w in self.widths if w < 1]
        if bad:
            raise ValueError(f"band widths must be >= 1, got {bad}")
        return self

    @property
    def n_bands(self) -> int:
        return len(self.widths)

    @property
    def n_bins(self) -> int:
        return sum(self.widths)

    @property
    def offsets(self) -> List[int]:
        """Start bin of every band (exclusive prefix sums of the widths)."""
        starts, acc = [], 0
        for width in self.widths:
            starts.append(acc)
            acc += width
        return starts

    def check_bins(self, n_bins: int) -> None:
        """Raise if the scheme does not partition exactly `n_bins` bins."""
        if self.n_bins != n_bins:
            raise ShapeMismatchError(
                f"band scheme covers {self.n_bins} bins but the spectrogram has {n_bins}"
            )

    @classmethod
    def uniform(cls, n_bins: int, n_bands: int) -> "BandScheme":
        """Near-equal widths, the remainder spread over the highest bands."""
        if n_bands < 1 or n_bins < n_bands:
            raise ValueError(f"cannot split {n_bins} bins into {n_bands} bands")
        base, extra = divmod(n_bins, n_bands)
        return cls(widths=[base + (1 if k >= n_bands - extra else 0) for k in range(n_bands)])


class SsdDims(BaseModel):
    """Dimensions of one Mamba-2 block."""
    model_config = {"protected_namespaces": (), "frozen": True}

    d_model: int = Field(default=128, gt=0)
    d_state: int = Field(default=128, gt=0)
    d_conv: int = Field(default=4, gt=0)
    expand: int = Field(default=4, gt=0)
    headdim: int = Field(default=64, gt=0)
    chunk_size: int = Field(default=64, gt=0)

    @model_validator(mode="after")
    def _check_heads(self) -> "SsdDims":
        if (self.d_model * self.expand) % self.headdim:
            raise ValueError(
                f"d_model*expand ({self.d_model * self.expand}) is not divisible by headdim ({self.headdim})"
            )
        return self

    @property
    def d_inner(self) -> int:
        return self.d_model * self.expand

    @property
    def n_heads(self) -> int:
        return self.d_inner // self.headdim


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the two-stage separator."""
    model_config = {"protected_namespaces": (), "frozen": True}

    N: int = Field(default=128, gt=0)
    band_widths: Optional[List[int]] = None  # None -> default 57-band scheme
    layers_stage1: int = Field(default=8, ge=1)
    layers_stage2: int = Field(default=4, ge=1)
    ssd: SsdDims = Field(default_factory=SsdDims)
    sources: List[str] = Field(default_factory=lambda: list(DEFAULT_SOURCES), min_length=1)
    stft: StftConfig = Field(default_factory=StftConfig)
    discretization: Discretization = Discretization.ZOH
    scan_mode: ScanMode = ScanMode.CHUNKED
    stage2_input: Stage2Input = Stage2Input.MIXTURE

    # Band merge heads
    merge_hidden: Optional[int] = Field(default=None, gt=0)  # None -> N
    merge_hidden_layers: int = Field(default=2, ge=1)

    # Initialization
    dt_min: float = Field(default=1e-3, gt=0)
    dt_max: float = Field(default=1e-1, gt=0)
    dt_floor: float = Field(default=1e-4, gt=0)
    a_init_range: Tuple[float, float] = (1.0, 16.0)
    prelu_init: float = 0.25
    norm_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ModelConfig":
        if self.ssd.d_model != self.N:
            raise ValueError(f"ssd.d_model ({self.ssd.d_model}) must equal N ({self.N})")
        if self.band_widths is not None and sum(self.band_widths) != self.stft.n_bins:
            raise ValueError(
                f"band widths cover {sum(self.band_widths)} bins, STFT yields {self.stft.n_bins}"
            )
        if not self.dt_min <= self.dt_max:
            raise ValueError("dt_min must not exceed dt_max")
        lo, hi = self.a_init_range
        if not 0 < lo <= hi:
            raise ValueError(f"a_init_range must satisfy 0 < lo <= hi, got {self.a_init_range}")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError(f"duplicate source names in {self.sources}")
        return self

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def hidden(self) -> int:
        return self.merge_hidden or self.N

    @property
    def scheme(self) -> BandScheme:
        if self.band_widths is not None:
            return BandScheme(widths=self.band_widths)
        from tsbsmamba.services.bands import default_band_scheme
        return default_band_scheme(self.stft.n_bins)

    @classmethod
    def full(cls) -> "ModelConfig":
        """8 + 4 layer configuration."""
        return cls()

    @classmethod
    def lightweight(cls) -> "ModelConfig":
        """4 + 2 layer configuration."""
        return cls(layers_stage1=4, layers_stage2=2)

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Tiny configuration for gradient checks and fast tests."""
        params = dict(
            N=8,
            band_widths=[2, 3, 4, 7],
            layers_stage1=1,
            layers_stage2=1,
            ssd=SsdDims(d_model=8, d_state=4, d_conv=4, expand=2, headdim=4, chunk_size=16),
            stft=StftConfig(n_fft=30, hop=8, sample_rate=2048),
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def preset(cls, name: str) -> "ModelConfig":
        presets = {"full": cls.full, "lightweight": cls.lightweight, "toy": cls.toy}
        if name not in presets:
            raise ValueError(f"Unknown model preset '{name}' (choose from {sorted(presets)})")
        return presets[name]()


class SadConfig(BaseModel):
    """Energy-based source activity detector."""
    model_config = {"protected_namespaces": ()}

    window: int = Field(default=132300, gt=0, description="Window length in samples")
    hop: int = Field(default=66150, gt=0, description="Hop between windows in samples")
    threshold: float = Field(default=0.1, gt=0.0, le=1.0, description="RMS threshold relative to track RMS")

    @model_validator(mode="after")
    def _check_window(self) -> "SadConfig":
        if self.window < self.hop:
            raise ValueError(f"SAD window ({self.window}) must be >= hop ({self.hop})")
        return self


class OptimConfig(BaseModel):
    """Adam, clipping and plateau decay."""
    model_config = {"protected_namespaces": ()}

    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    clip_norm: float = Field(default=5.0, gt=0)
    decay: float = Field(default=0.8, gt=0, le=1)
    patience: int = Field(default=2, ge=1, description="Epochs without improvement before decay")


class DataConfig(BaseModel):
    """Synthetic track generation and on-the-fly mixing."""
    model_config = {"protected_namespaces": ()}

    n_songs: int = Field(default=4, ge=1)
    song_seconds: float = Field(default=8.0, ge=3.0)
    segment_seconds: float = Field(default=1.0, gt=0)
    gain_db: Tuple[float, float] = (-3.0, 3.0)
    validation_fraction: float = Field(default=0.15, ge=0.0, lt=1.0)
    sad_threshold: float = Field(default=0.1, gt=0.0, le=1.0)
    stems_dir: Optional[str] = None  # None -> synthetic tracks

    @model_validator(mode="after")
    def _check_ranges(self) -> "DataConfig":
        if self.gain_db[0] > self.gain_db[1]:
            raise ValueError(f"gain_db range is inverted: {self.gain_db}")
        if self.segment_seconds > self.song_seconds:
            raise ValueError(
                f"segment_seconds ({self.segment_seconds}) exceeds song_seconds ({self.song_seconds})"
            )
        return self


class TrainingConfig(BaseModel):
    """One training run."""
    model_config = {"protected_namespaces": ()}

    model: ModelConfig = Field(default_factory=ModelConfig.toy)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    epochs: int = Field(default=2, ge=1)
    steps_per_epoch: int = Field(default=50, ge=1)
    batch_size: int = Field(default=4, ge=1)
    validation_batches: int = Field(default=2, ge=1)
    seed: int = 0


class RunConfig(BaseModel):
    """Arguments shared by every CLI subcommand."""
    model_config = {"protected_namespaces": ()}

    subcommand: str
    config_path: Optional[Path] = None
    seed: int = 0
    precision: Literal["f32", "f64"] = "f32"
    output_dir: Path = Path("runs")

    @model_validator(mode="after")
    def _check_paths(self) -> "RunConfig":
        if self.config_path is not None and not self.config_path.exists():
            raise ValueError(f"config file not found: {self.config_path}")
        return self
