"""
Selective state space core of the Mamba-2 block.

Three interchangeable kernels compute the same map y = SSM(x):

- `ssd_scan`: the linear recurrence h_t = a_t h_{t-1} + b_t x_t^T, y_t = h_t c_t
- `ssd_dual`: the quadratic form y = M x with the lower-triangular
  semiseparable matrix M[t, s] = c_t . (a_{s+1} ... a_t) b_s
- `ssd_chunked`: quadratic inside fixed-size chunks, recurrent across them

Shapes (leading batch dims allowed everywhere):
    x      [..., T, H, P]   inputs per head
    a_bar  [..., T, H]      per-head scalar decay
    b_bar  [..., T, H, N]   discretized input projection
    C      [..., T, N]      output projection, shared by all heads
"""
from typing import Callable, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from tsbsmamba.core.exceptions import NonFiniteError, ShapeMismatchError
from tsbsmamba.models.config_models import Discretization, ScanMode, SsdDims
from tsbsmamba.services.layers import RMSNormGated
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)


def _check_shapes(x: torch.Tensor, a: torch.Tensor, b: torch.Tensor, c: torch.Tensor) -> None:
    if x.dim() < 3:
        raise ShapeMismatchError(f"x must be [..., T, H, P], got {tuple(x.shape)}")
    lead_t_h = x.shape[:-1]
    if a.shape != lead_t_h:
        raise ShapeMismatchError(f"decay shape {tuple(a.shape)} does not match x {tuple(x.shape)}")
    if b.shape[:-1] != lead_t_h:
        raise ShapeMismatchError(f"B shape {tuple(b.shape)} does not match x {tuple(x.shape)}")
    n_state = b.shape[-1]
    if c.shape != (*x.shape[:-2], n_state):
        raise ShapeMismatchError(f"C shape {tuple(c.shape)} must be {(*x.shape[:-2], n_state)}")


def _discretize(
    A: torch.Tensor, B: torch.Tensor, dt: torch.Tensor, method: Discretization
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Unchecked discretization returning (log decay, b_bar)."""
    dA = dt * A
    if method == Discretization.ZOH:
        coeff = torch.expm1(dA) / A
    else:
        coeff = dt
    return dA, coeff.unsqueeze(-1) * B.unsqueeze(-2)


def discretize(
    A: torch.Tensor,
    B: torch.Tensor,
    dt: torch.Tensor,
    method: Discretization = Discretization.ZOH,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Zero-order-hold discretization with a scalar A per head.

    Args:
        A: Continuous decay per head [H], strictly negative
        B: Input projection [..., T, N]
        dt: Step sizes [..., T, H], strictly positive
        method: zoh uses (exp(dt*A) - 1) / A * B, euler-b uses dt * B

    Returns:
        (a_bar [..., T, H], b_bar [..., T, H, N])

    Raises:
        ValueError: If any dt <= 0 or any A >= 0
    """
    if (dt <= 0).any():
        raise ValueError("discretize requires dt > 0 everywhere")
    if (A >= 0).any():
        raise ValueError("discretize requires A < 0 for every head")
    dA, b_bar = _discretize(A, B, dt, Discretization(method))
    return torch.exp(dA), b_bar


def ssd_scan(x: torch.Tensor, a_bar: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """Sequential recurrence from a zero initial state; returns y [..., T, H, P]."""
    _check_shapes(x, a_bar, b_bar, C)
    n_steps = x.shape[-3]
    state = x.new_zeros(*x.shape[:-3], x.shape[-2], x.shape[-1], b_bar.shape[-1])  # [..., H, P, N]
    outputs = []
    for t in range(n_steps):
        state = (
            a_bar[..., t, :, None, None] * state
            + x[..., t, :, :, None] * b_bar[..., t, :, None, :]
        )
        outputs.append((state * C[..., t, None, None, :]).sum(dim=-1))
    return torch.stack(outputs, dim=-3)


def segsum(log_a: torch.Tensor) -> torch.Tensor:
    """
    Segment sums of log decays.

    out[..., t, s] = log_a[..., s+1] + ... + log_a[..., t] for s <= t and -inf
    above the diagonal. Built by masked cumulative sums, never by differences,
    so -inf entries (zero decay) stay exact.
    """
    length = log_a.shape[-1]
    expanded = log_a.unsqueeze(-1).expand(*log_a.shape, length)  # [..., r, s] = log_a[r]
    strictly_lower = torch.tril(torch.ones(length, length, dtype=torch.bool, device=log_a.device), diagonal=-1)
    sums = torch.cumsum(expanded.masked_fill(~strictly_lower, 0.0), dim=-2)
    lower = torch.tril(torch.ones(length, length, dtype=torch.bool, device=log_a.device), diagonal=0)
    return sums.masked_fill(~lower, float("-inf"))


def semiseparable_matrix(log_a: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """M [..., H, T, T] from log decays [..., T, H], b_bar and C."""
    decay = torch.exp(segsum(log_a.transpose(-1, -2)))  # [..., H, T, T]
    scores = torch.einsum("...tn,...shn->...hts", C, b_bar)
    return scores * decay


def _ssd_dual_log(x: torch.Tensor, log_a: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    matrix = semiseparable_matrix(log_a, b_bar, C)
    return torch.einsum("...hts,...shp->...thp", matrix, x)


def ssd_dual(x: torch.Tensor, a_bar: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """Quadratic form y = M x, materializing the T x T matrix per head."""
    _check_shapes(x, a_bar, b_bar, C)
    return _ssd_dual_log(x, torch.log(a_bar), b_bar, C)


def _ssd_chunked_log(
    x: torch.Tensor, log_a: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor, chunk_size: int
) -> torch.Tensor:
    lead = x.shape[:-3]
    n_steps, n_heads, headdim = x.shape[-3:]
    n_state = b_bar.shape[-1]
    x = x.reshape(-1, n_steps, n_heads, headdim)
    log_a = log_a.reshape(-1, n_steps, n_heads)
    b_bar = b_bar.reshape(-1, n_steps, n_heads, n_state)
    C = C.reshape(-1, n_steps, 1, n_state).expand(-1, n_steps, n_heads, n_state)

    # Trailing padding never reaches earlier outputs
    pad = (-n_steps) % chunk_size
    if pad:
        x = F.pad(x, (0, 0, 0, 0, 0, pad))
        log_a = F.pad(log_a, (0, 0, 0, pad))
        b_bar = F.pad(b_bar, (0, 0, 0, 0, 0, pad))
        C = F.pad(C, (0, 0, 0, 0, 0, pad))
    batch = x.shape[0]
    n_chunks = x.shape[1] // chunk_size

    X = x.reshape(batch, n_chunks, chunk_size, n_heads, headdim)
    B = b_bar.reshape(batch, n_chunks, chunk_size, n_heads, n_state)
    Cc = C.reshape(batch, n_chunks, chunk_size, n_heads, n_state)
    A = log_a.reshape(batch, n_chunks, chunk_size, n_heads).permute(0, 3, 1, 2)  # [b, h, c, l]
    A_cumsum = torch.cumsum(A, dim=-1)

    # Within each chunk; pairwise contractions keep every intermediate at
    # [b, c, h, l, s] or smaller
    L = torch.exp(segsum(A)).transpose(1, 2)  # [b, c, h, l, s]
    scores = torch.einsum("bclhn,bcshn->bchls", Cc, B) * L
    y_diag = torch.einsum("bchls,bcshp->bclhp", scores, X)

    # State left at the end of each chunk
    decay_states = torch.exp(A_cumsum[..., -1:] - A_cumsum).permute(0, 2, 3, 1)  # [b, c, l, h]
    states = torch.einsum("bclhn,bclhp->bchpn", B * decay_states.unsqueeze(-1), X)

    # Carry states across chunk boundaries
    states = torch.cat([torch.zeros_like(states[:, :1]), states], dim=1)
    decay_chunk = torch.exp(segsum(F.pad(A_cumsum[..., -1], (1, 0))))
    states = torch.einsum("bhzc,bchpn->bzhpn", decay_chunk, states)[:, :-1]

    # Contribution of the carried state to each output
    state_decay = torch.exp(A_cumsum).permute(0, 2, 3, 1).unsqueeze(-1)  # [b, c, l, h, 1]
    y_off = torch.einsum("bclhn,bchpn->bclhp", Cc * state_decay, states)

    y = (y_diag + y_off).reshape(batch, n_chunks * chunk_size, n_heads, headdim)[:, :n_steps]
    return y.reshape(*lead, n_steps, n_heads, headdim)


def ssd_chunked(
    x: torch.Tensor, a_bar: torch.Tensor, b_bar: torch.Tensor, C: torch.Tensor, chunk_size: int = 64
) -> torch.Tensor:
    """Block-decomposed form; requires strictly positive decays."""
    _check_shapes(x, a_bar, b_bar, C)
    if (a_bar <= 0).any():
        raise ValueError("ssd_chunked requires a_bar > 0 (finite log decays)")
    return _ssd_chunked_log(x, torch.log(a_bar), b_bar, C, chunk_size)


class Mamba2Block(nn.Module):
    """
    Causal Mamba-2 block: in-projection, depthwise conv, selective SSM,
    gated RMS norm, out-projection.
    """

    def __init__(
        self,
        dims: SsdDims,
        discretization: Discretization = Discretization.ZOH,
        scan_mode: ScanMode = ScanMode.CHUNKED,
        dt_min: float = 1e-3,
        dt_max: float = 1e-1,
        dt_floor: float = 1e-4,
        a_init_range: Tuple[float, float] = (1.0, 16.0),
        eps: float = 1e-5,
        check_finite: bool = True,
        name: str = "mamba2",
    ):
        super().__init__()
        self.dims = dims
        self.discretization = Discretization(discretization)
        self.scan_mode = ScanMode(scan_mode)
        self.dt_floor = dt_floor
        self.check_finite = check_finite
        self.name = name

        d_inner, d_state, n_heads = dims.d_inner, dims.d_state, dims.n_heads
        self.conv_dim = d_inner + 2 * d_state
        self.in_proj = nn.Linear(dims.d_model, 2 * d_inner + 2 * d_state + n_heads, bias=False)
        self.conv1d = nn.Conv1d(
            self.conv_dim,
            self.conv_dim,
            kernel_size=dims.d_conv,
            groups=self.conv_dim,
            padding=dims.d_conv - 1,
            bias=True,
        )

        # softplus(dt_bias) starts log-uniform in [dt_min, dt_max]
        log_lo, log_hi = torch.log(torch.tensor(dt_min)), torch.log(torch.tensor(dt_max))
        dt = torch.exp(torch.rand(n_heads) * (log_hi - log_lo) + log_lo).clamp(min=dt_floor)
        self.dt_bias = nn.Parameter(dt + torch.log(-torch.expm1(-dt)))

        self.A_log = nn.Parameter(torch.log(torch.empty(n_heads).uniform_(*a_init_range)))
        self.D = nn.Parameter(torch.ones(n_heads))
        self.norm = RMSNormGated(d_inner, eps=eps)
        self.out_proj = nn.Linear(d_inner, dims.d_model, bias=False)

    def _kernel(self) -> Callable[..., torch.Tensor]:
        if self.scan_mode == ScanMode.SEQUENTIAL:
            return lambda x, log_a, b, c: ssd_scan(x, torch.exp(log_a), b, c)
        if self.scan_mode == ScanMode.DUAL:
            return _ssd_dual_log
        return lambda x, log_a, b, c: _ssd_chunked_log(x, log_a, b, c, self.dims.chunk_size)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """
        Args:
            u: [..., T, d_model]

        Returns:
            [..., T, d_model]
        """
        dims = self.dims
        if u.dim() < 2 or u.shape[-1] != dims.d_model or u.shape[-2] < 1:
            raise ShapeMismatchError(f"{self.name}: expected [..., T>=1, {dims.d_model}], got {tuple(u.shape)}")
        lead, n_steps = u.shape[:-2], u.shape[-2]
        flat = u.reshape(-1, n_steps, dims.d_model)

        z, xBC, dt = torch.split(
            self.in_proj(flat), [dims.d_inner, self.conv_dim, dims.n_heads], dim=-1
        )
        xBC = self.conv1d(xBC.transpose(1, 2))[..., :n_steps].transpose(1, 2)
        x, B, C = torch.split(F.silu(xBC), [dims.d_inner, dims.d_state, dims.d_state], dim=-1)

        dt = F.softplus(dt + self.dt_bias).clamp(min=self.dt_floor)
        A = -torch.exp(self.A_log)
        log_a, b_bar = _discretize(A, B, dt, self.discretization)

        x = x.reshape(-1, n_steps, dims.n_heads, dims.headdim)
        y = self._kernel()(x, log_a, b_bar, C)
        y = y + self.D[:, None] * x
        y = self.norm(y.reshape(-1, n_steps, dims.d_inner), z)
        out = self.out_proj(y)

        if self.check_finite and not torch.isfinite(out).all():
            raise NonFiniteError(self.name)
        return out.reshape(*lead, n_steps, dims.d_model)


class BMamba2Block(nn.Module):
    """Forward and time-reversed Mamba-2 blocks, concatenated on features."""

    def __init__(self, dims: SsdDims, name: str = "bmamba2", **block_kwargs):
        super().__init__()
        self.forward_block = Mamba2Block(dims, name=f"{name}.forward", **block_kwargs)
        self.backward_block = Mamba2Block(dims, name=f"{name}.backward", **block_kwargs)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """[..., T, d_model] -> [..., T, 2*d_model]"""
        ahead = self.forward_block(u)
        behind = self.backward_block(u.flip(-2)).flip(-2)
        return torch.cat([ahead, behind], dim=-1)


def mamba2_forward(u: torch.Tensor, p: Mamba2Block) -> torch.Tensor:
    return p(u)


def bmamba2_forward(u: torch.Tensor, p: BMamba2Block) -> torch.Tensor:
    return p(u)
