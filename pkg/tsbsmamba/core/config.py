import sys
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional

import torch
from pydantic_settings import BaseSettings, SettingsConfigDict

from tsbsmamba.models.config_models import ModelConfig, TrainingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Settings(BaseSettings):
    """Process-level settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="TSBSMAMBA_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Numerics
    precision: Literal["f32", "f64"] = "f32"
    seed: int = 0
    num_threads: int = 0  # 0 keeps torch's default
    check_finite: bool = True  # raise on non-finite Mamba-2 outputs

    # Artifacts
    output_dir: str = "runs"

    # Logging
    log_level: str = "INFO"


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


def apply_precision(precision: str) -> torch.dtype:
    """
    Make `precision` the default torch dtype.

    Args:
        precision: "f32" or "f64"

    Returns:
        The dtype now in effect
    """
    if precision not in ("f32", "f64"):
        raise ValueError(f"Unknown precision '{precision}' (expected f32 or f64)")
    dtype = torch.float64 if precision == "f64" else torch.float32
    torch.set_default_dtype(dtype)
    return dtype


def apply_runtime(settings: Settings, seed: Optional[int] = None) -> None:
    """Set the torch thread count and seed; `seed` overrides the settings seed."""
    if settings.num_threads > 0:
        torch.set_num_threads(settings.num_threads)
    torch.manual_seed(settings.seed if seed is None else seed)


def read_toml(path: Path) -> Dict[str, Any]:
    """Parse a TOML file into a plain dict."""
    with open(path, "rb") as f:
        return tomllib.load(f)


def _model_from_table(table: Dict[str, Any]) -> ModelConfig:
    # `preset` picks the base configuration, remaining keys override it
    table = dict(table)
    preset = table.pop("preset", None)
    if preset is None:
        return ModelConfig.model_validate(table)
    base = ModelConfig.preset(preset).model_dump()
    base.update(table)
    return ModelConfig.model_validate(base)


def load_model_config(path: Path) -> ModelConfig:
    """
    Model configuration from TOML.

    Accepts either a bare model file or a training file with a `[model]` table.
    """
    raw = read_toml(Path(path))
    return _model_from_table(raw.get("model", raw))


def load_training_config(path: Path) -> TrainingConfig:
    """Training run configuration from TOML (`[model]`, `[optim]`, `[data]` tables)."""
    raw = read_toml(Path(path))
    model = raw.pop("model", None)
    if model is not None:
        raw["model"] = _model_from_table(model)
    return TrainingConfig.model_validate(raw)
