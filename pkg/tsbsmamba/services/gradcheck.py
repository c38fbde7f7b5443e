"""
Finite-difference verification of autograd gradients.
"""
from typing import Callable, Dict, List, Optional

import torch
from pydantic import BaseModel

from tsbsmamba.models.config_models import ModelConfig
from tsbsmamba.models.result_models import ComplexSpectrogram
from tsbsmamba.services.separator import build_model, forward
from tsbsmamba.services.spectral import stft
from tsbsmamba.services.training import total_loss
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

FD_STEP = 1e-5
FAIL_THRESHOLD = 1e-3
_REL_FLOOR = 1e-6
# A central difference of a loss L carries about this many ulps of |L| / step
# of round-off; gradients below _FLOOR_OVER_NOISE times that are compared on
# an absolute scale.
_ROUNDOFF_ULPS = 100.0
_FLOOR_OVER_NOISE = 1e4


class GroupError(BaseModel):
    group: str
    max_rel_error: float
    checked: int


class GradCheckReport(BaseModel):
    max_rel_error: float
    worst_group: str
    groups: List[GroupError]
    tolerance: float = FAIL_THRESHOLD
    floor: float = _REL_FLOOR

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = _REL_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def roundoff_floor(loss: torch.Tensor, step: float = FD_STEP) -> float:
    """
    Smallest gradient magnitude central differences resolve on `loss`.

    The round-off of (L(x+h) - L(x-h)) / 2h grows with |L| / h, so a
    coordinate whose true gradient is of that order would report a large
    relative error even when autograd is exact.
    """
    noise = _ROUNDOFF_ULPS * torch.finfo(loss.dtype).eps * max(abs(loss.item()), 1.0) / step
    return max(_REL_FLOOR, noise * _FLOOR_OVER_NOISE)


@torch.no_grad()
def _central_difference(fn: Callable[[], torch.Tensor], flat: torch.Tensor, index: int, step: float) -> float:
    original = flat[index].item()
    flat[index] = original + step
    plus = fn().item()
    flat[index] = original - step
    minus = fn().item()
    flat[index] = original
    return (plus - minus) / (2 * step)


def finite_difference_check(
    fn: Callable[[], torch.Tensor],
    params: Dict[str, torch.Tensor],
    step: float = FD_STEP,
    coords_per_group: Optional[int] = 2,
    seed: int = 0,
    tolerance: float = FAIL_THRESHOLD,
) -> GradCheckReport:
    """
    Compare autograd gradients of the scalar `fn()` with central differences.

    Errors are relative to max(|analytic|, |numeric|, floor), where the floor
    is the round-off resolution of the difference quotient on this loss.

    Args:
        fn: Closure evaluating the scalar loss from the current parameter values
        params: Named leaf tensors with requires_grad
        step: Finite-difference step
        coords_per_group: Coordinates sampled per tensor (None checks all)
        seed: Coordinate sampling seed
        tolerance: Largest relative error that still passes

    Returns:
        GradCheckReport with the worst relative error per parameter group
    """
    names = list(params)
    value = fn()
    grads = torch.autograd.grad(value, [params[n] for n in names], allow_unused=True)
    floor = roundoff_floor(value.detach(), step)
    generator = torch.Generator().manual_seed(seed)

    groups = []
    for name, grad in zip(names, grads):
        tensor = params[name]
        analytic = torch.zeros_like(tensor) if grad is None else grad
        flat, flat_grad = tensor.data.view(-1), analytic.reshape(-1)
        n = flat.numel()
        if coords_per_group is None or coords_per_group >= n:
            coords = list(range(n))
        else:
            coords = torch.randperm(n, generator=generator)[:coords_per_group].tolist()
        worst = 0.0
        for i in coords:
            numeric = _central_difference(fn, flat, i, step)
            worst = max(worst, relative_error(flat_grad[i].item(), numeric, floor))
        groups.append(GroupError(group=name, max_rel_error=worst, checked=len(coords)))

    worst_group = max(groups, key=lambda g: g.max_rel_error)
    report = GradCheckReport(
        max_rel_error=worst_group.max_rel_error,
        worst_group=worst_group.group,
        groups=groups,
        tolerance=tolerance,
        floor=floor,
    )
    if report.passed:
        logger.info(f"Gradient check passed: max relative error {report.max_rel_error:.2e} ({report.worst_group})")
    else:
        logger.error(f"Gradient check failed: max relative error {report.max_rel_error:.2e} in {report.worst_group}")
    return report


def grad_check(
    cfg: Optional[ModelConfig] = None,
    seed: int = 0,
    seconds: float = 0.25,
    coords_per_group: Optional[int] = 2,
    tolerance: float = FAIL_THRESHOLD,
) -> GradCheckReport:
    """
    Gradient check of the two-stage loss on a small separator.

    References are independent random signals, so estimate and reference
    never coincide and the mean-absolute terms stay away from their kink.

    Raises:
        ValueError: Unless 64-bit floats are the default dtype
    """
    if torch.get_default_dtype() != torch.float64:
        raise ValueError("grad_check requires 64-bit mode (precision f64)")
    cfg = cfg or ModelConfig.toy()
    model = build_model(cfg, seed=seed, check_finite=False)
    stft_cfg = cfg.stft
    n_samples = max(int(round(seconds * stft_cfg.sample_rate)), stft_cfg.n_fft)

    generator = torch.Generator().manual_seed(seed)
    mixture = torch.randn(2, n_samples, generator=generator)
    references = torch.randn(cfg.n_sources, 2, n_samples, generator=generator)
    mixture_spec = stft(mixture, stft_cfg)
    reference_spec = stft(references, stft_cfg).data

    def loss() -> torch.Tensor:
        result = forward(ComplexSpectrogram(data=mixture_spec.data, cfg=stft_cfg), model)
        return total_loss(result, reference_spec, stft_cfg, n_samples).total

    params = dict(model.named_parameters())
    return finite_difference_check(loss, params, coords_per_group=coords_per_group, seed=seed, tolerance=tolerance)


def quadratic_self_check(dim: int = 5, seed: int = 0) -> GradCheckReport:
    """Harness self-test on 0.5 x^T Q x, where central differences are exact."""
    generator = torch.Generator().manual_seed(seed)
    basis = torch.randn(dim, dim, generator=generator, dtype=torch.float64)
    q = basis @ basis.T + dim * torch.eye(dim, dtype=torch.float64)
    x = torch.randn(dim, generator=generator, dtype=torch.float64).requires_grad_(True)
    return finite_difference_check(lambda: 0.5 * x @ q @ x, {"x": x}, coords_per_group=None, tolerance=1e-10)
