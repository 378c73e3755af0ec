"""Selective state-space sequence layers.

The continuous system h' = A h + B x, y = C h is discretized per position
with zero-order hold at input-dependent step sizes, then evaluated either
by the sequential recurrence (compiled kernel when available) or by an
associative parallel scan. Both evaluation orders share one adjoint, so
they are interchangeable inside the autodiff graph.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as kernels
from . import tensor as T
from .errors import ContractError, NumericError, ShapeError
from .layers import DepthwiseConv1d, LayerNorm, Linear, Module
from .tensor import Tensor, _accum, _make, as_tensor

ZOH_SERIES_GUARD = 1e-4


def zoh_discretize(a, delta, b):
    """Zero-order-hold discretization of h' = a h + b x over step `delta`.

    Returns (a_bar, b_bar) with a_bar = exp(delta a) and
    b_bar = (delta a)^-1 (exp(delta a) - 1) delta b, evaluated through the
    series delta b (1 + delta a / 2) when |delta a| < 1e-4 to avoid the
    0/0 form. Elementwise over numpy arrays or scalars.
    """
    a = np.asarray(a, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    z = delta * a
    a_bar = np.exp(z)
    small = np.abs(z) < ZOH_SERIES_GUARD
    safe = np.where(small, 1.0, z)
    phi = np.where(small, 1.0 + 0.5 * z, (a_bar - 1.0) / safe)
    b_bar = phi * delta * b
    if a_bar.ndim == 0:
        return float(a_bar), float(b_bar)
    return a_bar, b_bar


def _scan_op(x: Tensor, Bm: Tensor, C: Tensor, dt: Tensor, A: Tensor,
             parallel: bool) -> Tensor:
    """Differentiable scan over batched inputs (BS, L, ...)."""
    xd, Bd, Cd, dtd, Ad = x.data, Bm.data, C.data, dt.data, A.data
    if xd.ndim != 3 or Bd.ndim != 3 or dtd.ndim != 3 or Ad.ndim != 2:
        raise ShapeError(
            f"scan expects x/Bm/C/dt rank 3 and A rank 2, got "
            f"{xd.shape}, {Bd.shape}, {Cd.shape}, {dtd.shape}, {Ad.shape}"
        )
    if Bd.shape != Cd.shape or Bd.shape[:2] != xd.shape[:2] or dtd.shape != xd.shape:
        raise ShapeError(
            f"scan operand shapes disagree: x {xd.shape}, Bm {Bd.shape}, "
            f"C {Cd.shape}, dt {dtd.shape}"
        )
    if Ad.shape != (xd.shape[2], Bd.shape[2]):
        raise ShapeError(f"A shape {Ad.shape} != (D={xd.shape[2]}, N={Bd.shape[2]})")
    if dtd.size and dtd.min() <= 0:
        raise ContractError(f"scan requires dt > 0, min was {dtd.min()}")
    if parallel:
        y, h = kernels.scan_fwd_parallel(xd, Bd, Cd, dtd, Ad)
    else:
        y, h = kernels.scan_fwd(xd, Bd, Cd, dtd, Ad)
    if np.isnan(y).any():
        b, l, d = np.argwhere(np.isnan(y))[0]
        raise NumericError(f"scan produced NaN at (batch={b}, position={l}, channel={d})")

    def bwd(g):
        dx, dB, dC, ddt, dA = kernels.scan_bwd(xd, Bd, Cd, dtd, Ad, h, np.ascontiguousarray(g))
        _accum(x, dx)
        _accum(Bm, dB)
        _accum(C, dC)
        _accum(dt, ddt)
        _accum(A, dA)

    return _make(y, (x, Bm, C, dt, A), bwd)


def _with_batch(t: Tensor) -> tuple[Tensor, bool]:
    if t.ndim == 2:
        return T.reshape(t, (1,) + t.shape), True
    return t, False


def scan_sequential(x, Bm, C, dt, A) -> Tensor:
    """Left-to-right recurrence; accepts (L, .) or (BS, L, .) operands."""
    x, Bm, C, dt, A = map(as_tensor, (x, Bm, C, dt, A))
    xb, squeezed = _with_batch(x)
    if squeezed:
        Bm, C, dt = (T.reshape(t, (1,) + t.shape) for t in (Bm, C, dt))
    out = _scan_op(xb, Bm, C, dt, A, parallel=False)
    return T.reshape(out, out.shape[1:]) if squeezed else out


def scan_parallel(x, Bm, C, dt, A) -> Tensor:
    """Associative-scan evaluation; same contract as scan_sequential."""
    x, Bm, C, dt, A = map(as_tensor, (x, Bm, C, dt, A))
    xb, squeezed = _with_batch(x)
    if squeezed:
        Bm, C, dt = (T.reshape(t, (1,) + t.shape) for t in (Bm, C, dt))
    out = _scan_op(xb, Bm, C, dt, A, parallel=True)
    return T.reshape(out, out.shape[1:]) if squeezed else out


def init_state_matrix(channels: int, state_size: int) -> Tensor:
    """A[d, n] = -(n + 1): stable, with per-state decay rates 1..N."""
    a = -np.tile(np.arange(1, state_size + 1, dtype=np.float32), (channels, 1))
    return Tensor(a, requires_grad=True)


class S6Projections(Module):
    """Input-dependent (B, C, dt) maps for a selective scan over `channels`.

    B and C get one value per state per position; dt is a single positive
    scalar per position (softplus of a linear map) broadcast across all
    channels.
    """

    def __init__(self, channels: int, state_size: int, rng: np.random.Generator,
                 dt_init: float = 0.05):
        self.b_proj = Linear(channels, state_size, rng)
        self.c_proj = Linear(channels, state_size, rng)
        self.dt_proj = Linear(channels, 1, rng)
        # softplus(bias) == dt_init at zero input
        self.dt_proj.bias.data[:] = np.log(np.expm1(dt_init)).astype(np.float32)
        self.channels = channels

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        Bm = self.b_proj(x)
        C = self.c_proj(x)
        dt_scalar = T.softplus(self.dt_proj(x))
        ones = Tensor(np.ones((1, self.channels), dtype=np.float32))
        dt = T.matmul(dt_scalar, ones)
        return Bm, C, dt


def s6_project(x, proj: S6Projections):
    """Functional wrapper: (B, C, dt) for input x of shape (..., L, D)."""
    return proj(as_tensor(x))


class SsmCore(Module):
    """Expansion, depthwise conv, selective scan, and gated projection.

    Maps (BS, L, D) -> (BS, L, D). Bidirectional mode runs the same scan
    parameters over the reversed sequence and mixes the two feature sets
    with a linear map before gating.
    """

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 conv_width: int = 4, expand: int = 2, bidirectional: bool = True,
                 parallel_scan: bool = False):
        inner = expand * dim
        self.in_proj = Linear(dim, 2 * inner, rng)
        self.conv = DepthwiseConv1d(conv_width, inner, rng, causal=not bidirectional)
        self.s6 = S6Projections(inner, state_size, rng)
        self.A = init_state_matrix(inner, state_size)
        self.mix = Linear(2 * inner, inner, rng) if bidirectional else None
        self.out_proj = Linear(inner, dim, rng, zero_init=True)
        self.inner = inner
        self.bidirectional = bidirectional
        self.parallel_scan = parallel_scan

    def _scan(self, u: Tensor) -> Tensor:
        Bm, C, dt = self.s6(u)
        if self.parallel_scan:
            return _scan_op(u, Bm, C, dt, self.A, parallel=True)
        return _scan_op(u, Bm, C, dt, self.A, parallel=False)

    def __call__(self, x: Tensor) -> Tensor:
        uz = self.in_proj(x)
        u = T.take(uz, (Ellipsis, slice(0, self.inner)))
        z = T.take(uz, (Ellipsis, slice(self.inner, 2 * self.inner)))
        u = T.silu(self.conv(u))
        y = self._scan(u)
        if self.bidirectional:
            y_rev = T.flip(self._scan(T.flip(u, axis=1)), axis=1)
            y = self.mix(T.concat([y, y_rev], axis=-1))
        return self.out_proj(y * T.silu(z))


class MambaBlock(Module):
    """Pre-norm residual wrapper around an SsmCore."""

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 conv_width: int = 4, expand: int = 2, bidirectional: bool = True,
                 parallel_scan: bool = False):
        self.norm = LayerNorm(dim)
        self.core = SsmCore(dim, state_size, rng, conv_width=conv_width,
                            expand=expand, bidirectional=bidirectional,
                            parallel_scan=parallel_scan)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.core(self.norm(x))


def mamba_block(x, block: MambaBlock) -> Tensor:
    """Functional form of MambaBlock for (BS, L, D) or (L, D) input."""
    x = as_tensor(x)
    xb, squeezed = _with_batch(x)
    out = block(xb)
    return T.reshape(out, out.shape[1:]) if squeezed else out
