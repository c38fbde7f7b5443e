"""
Release-gate verification suites.

Each suite checks one invariant and returns a SuiteResult; `run_suites`
collects them. In 32-bit mode the tolerances are loosened and a warning is
logged; the gradient check always runs in 64-bit.
"""
import contextlib
import time
from typing import Callable, Iterator, List

import torch
from pydantic import BaseModel

from tsbsmamba.core.exceptions import VerificationError
from tsbsmamba.models.config_models import ModelConfig, OptimConfig, SsdDims, StftConfig
from tsbsmamba.models.result_models import ComplexSpectrogram
from tsbsmamba.services.evaluation import segment_and_separate
from tsbsmamba.services.gradcheck import grad_check, quadratic_self_check
from tsbsmamba.services.separator import build_model, force_identity, forward
from tsbsmamba.services.spectral import istft, stft
from tsbsmamba.services.ssd import ssd_chunked, ssd_dual, ssd_scan
from tsbsmamba.services.training import build_optimizer, clip_and_step, total_loss
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


class Tolerances(BaseModel):
    dual_form: float = 1e-10
    round_trip: float = 1e-6
    identity: float = 1e-4
    additivity: float = 1e-12
    gradient: float = 1e-4

    @classmethod
    def for_dtype(cls, dtype: torch.dtype) -> "Tolerances":
        if dtype == torch.float64:
            return cls()
        return cls(dual_form=1e-4, round_trip=1e-5, identity=1e-3, additivity=1e-6)


class SuiteResult(BaseModel):
    name: str
    invariant: str
    passed: bool
    detail: str
    seconds: float


class VerificationReport(BaseModel):
    results: List[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[SuiteResult]:
        return [r for r in self.results if not r.passed]


@contextlib.contextmanager
def default_dtype(dtype: torch.dtype) -> Iterator[None]:
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


def _run(name: str, invariant: str, check: Callable[[], str]) -> SuiteResult:
    start = time.perf_counter()
    try:
        detail, passed = check(), True
    except VerificationError as e:
        detail, passed = str(e), False
    result = SuiteResult(
        name=name, invariant=invariant, passed=passed, detail=detail, seconds=time.perf_counter() - start
    )
    log = logger.info if passed else logger.error
    log(f"[{'PASS' if passed else 'FAIL'}] {name} ({result.seconds:.2f} s): {detail}")
    return result


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def check_dual_form(n_instances: int = 200, tolerance: float = 1e-10, seed: int = 0, perturb: float = 0.0) -> str:
    """Scan, quadratic and chunked kernels agree on random instances."""
    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_instances):
        length, heads, headdim, d_state = (
            int(torch.randint(1, hi + 1, (1,), generator=generator)) for hi in (64, 4, 8, 16)
        )
        x = torch.randn(length, heads, headdim, generator=generator)
        a_bar = torch.rand(length, heads, generator=generator).clamp(min=1e-3)
        b_bar = torch.randn(length, heads, d_state, generator=generator)
        c = torch.randn(length, d_state, generator=generator)
        chunk = int(torch.randint(1, 33, (1,), generator=generator))

        scan = ssd_scan(x, a_bar, b_bar, c)
        dual = ssd_dual(x, a_bar, b_bar, c) + perturb
        chunked = ssd_chunked(x, a_bar, b_bar, c, chunk_size=chunk)
        worst = max(worst, float((scan - dual).abs().max()), float((scan - chunked).abs().max()))
    if worst > tolerance:
        raise VerificationError("dual-form equivalence", f"max |scan - dual| = {worst:.3e} > {tolerance:.0e}")
    return f"{n_instances} instances, max deviation {worst:.3e}"


def check_gradients(tolerance: float = 1e-4, seed: int = 0) -> str:
    """Autograd against central differences on the toy separator (64-bit)."""
    with default_dtype(torch.float64):
        harness = quadratic_self_check(seed=seed)
        if not harness.passed:
            raise VerificationError("finite-difference harness", f"quadratic self-check error {harness.max_rel_error:.3e}")
        report = grad_check(ModelConfig.toy(), seed=seed, tolerance=tolerance)
    if not report.passed:
        raise VerificationError(
            "gradient correctness",
            f"max relative error {report.max_rel_error:.3e} in {report.worst_group}",
        )
    return f"{len(report.groups)} parameter groups, max relative error {report.max_rel_error:.3e}"


def check_round_trip(tolerance: float = 1e-6, seed: int = 0) -> str:
    """istft(stft(x)) == x on one second of random stereo audio."""
    cfg = StftConfig()
    generator = torch.Generator().manual_seed(seed)
    wave = torch.rand(2, cfg.sample_rate, generator=generator) * 2 - 1
    restored = istft(stft(wave, cfg), wave.shape[-1])
    error = float((restored - wave).abs().max() / wave.abs().max())
    if error > tolerance:
        raise VerificationError("STFT round trip", f"peak-relative error {error:.3e} > {tolerance:.0e}")
    return f"peak-relative error {error:.3e}"


def identity_config() -> ModelConfig:
    """A narrow separator on the default STFT, used for the identity oracle."""
    return ModelConfig(
        N=8,
        layers_stage1=1,
        layers_stage2=1,
        ssd=SsdDims(d_model=8, d_state=4, d_conv=4, expand=2, headdim=4, chunk_size=64),
    )


def check_identity(tolerance: float = 1e-4, seed: int = 0, seconds: float = 10.0) -> str:
    """Masks of one and zero residuals reproduce the input after stitching."""
    model = force_identity(build_model(identity_config(), seed=seed))
    rate = model.cfg.stft.sample_rate
    generator = torch.Generator().manual_seed(seed)
    wave = torch.rand(2, int(seconds * rate), generator=generator) * 2 - 1
    stitched = segment_and_separate(wave, model)
    peak = float(wave.abs().max())
    error = max(float((stitched.stage(stage) - wave).abs().max()) for stage in (1, 2)) / peak
    if error > tolerance:
        raise VerificationError("two-stage identity", f"peak-relative error {error:.3e} > {tolerance:.0e}")
    return f"{stitched.n_segments} segments, peak-relative error {error:.3e}"


def check_loss_additivity(tolerance: float = 1e-12, steps: int = 50, seed: int = 0) -> str:
    """Reported total equals stage 1 plus stage 2 on every step of a short run."""
    cfg = ModelConfig.toy()
    model = build_model(cfg, seed=seed)
    optimizer, _, state = build_optimizer(model.parameters(), OptimConfig())
    generator = torch.Generator().manual_seed(seed)
    n_samples = cfg.stft.sample_rate // 4
    worst = 0.0
    for _ in range(steps):
        mixture = stft(torch.randn(2, n_samples, generator=generator), cfg.stft)
        refs = stft(torch.randn(cfg.n_sources, 2, n_samples, generator=generator), cfg.stft).data
        optimizer.zero_grad()
        report = total_loss(forward(ComplexSpectrogram(data=mixture.data, cfg=cfg.stft), model), refs, cfg.stft,
                            n_samples)
        values = report.as_floats()
        worst = max(worst, abs(values["total"] - (values["stage1"] + values["stage2"])) / abs(values["total"]))
        report.total.backward()
        clip_and_step(optimizer, state)
    if worst > tolerance:
        raise VerificationError("loss additivity", f"relative deviation {worst:.3e} > {tolerance:.0e}")
    return f"{steps} steps, max relative deviation {worst:.3e}"


def run_suites(seed: int = 0, perturb_dual: float = 0.0) -> VerificationReport:
    """Run every suite under the current default dtype."""
    dtype = torch.get_default_dtype()
    if dtype != torch.float64:
        logger.warning("Verification is meant for 64-bit mode; running 32-bit with looser tolerances")
    tol = Tolerances.for_dtype(dtype)
    results = [
        _run("dual_form", "dual-form equivalence",
             lambda: check_dual_form(tolerance=tol.dual_form, seed=seed, perturb=perturb_dual)),
        _run("gradients", "gradient correctness", lambda: check_gradients(tol.gradient, seed)),
        _run("round_trip", "STFT round trip", lambda: check_round_trip(tol.round_trip, seed)),
        _run("identity", "two-stage identity", lambda: check_identity(tol.identity, seed)),
        _run("additivity", "loss additivity", lambda: check_loss_additivity(tol.additivity, seed=seed)),
    ]
    return VerificationReport(results=results)
