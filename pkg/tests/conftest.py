import pytest
import torch

from tsbsmamba.models.config_models import ModelConfig
from tsbsmamba.services.separator import build_model


@pytest.fixture(autouse=True)
def _restore_default_dtype():
    previous = torch.get_default_dtype()
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def f64():
    torch.set_default_dtype(torch.float64)


@pytest.fixture
def toy_cfg() -> ModelConfig:
    return ModelConfig.toy()


@pytest.fixture
def toy_model(toy_cfg):
    return build_model(toy_cfg, seed=0)


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(1234)
