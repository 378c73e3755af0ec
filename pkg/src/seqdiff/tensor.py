"""Reverse-mode automatic differentiation over numpy arrays.

Tensors wrap float32 arrays by default (float64 is preserved when given,
which `grad_check` uses for finite-difference headroom). Each operation
records a backward closure; `backward` runs them in reverse topological
order and releases the graph afterwards so repeated training steps do not
accumulate memory.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference, timing)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(DEFAULT_DTYPE)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same values that blocks gradient flow entirely."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method sugar ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accum(t: Tensor, grad: np.ndarray) -> None:
    if not (t.requires_grad or t._backward is not None or t._parents):
        return
    g = _unbroadcast(np.asarray(grad), t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g.astype(t.data.dtype, copy=False)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap `data`, attaching the graph only while gradients are enabled."""
    track = _grad_enabled and any(
        p.requires_grad or p._parents or p._backward is not None for p in parents
    )
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss, then free the graph."""
    if loss.data.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    for node in topo:
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out_data = ad * bd

    def bwd(g):
        _accum(a, g * bd)
        _accum(b, g * ad)

    return _make(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out_data = ad / bd

    def bwd(g):
        _accum(a, g / bd)
        _accum(b, -g * ad / (bd * bd))

    return _make(out_data, (a, b), bwd)


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out_data = ad ** p

    def bwd(g):
        _accum(a, g * p * ad ** (p - 1))

    return _make(out_data, (a,), bwd)


def sqrt(a) -> Tensor:
    return pow_const(a, 0.5)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out_data = np.log(ad)

    def bwd(g):
        _accum(a, g / ad)

    return _make(out_data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out_data = np.empty_like(ad)
    pos = ad >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def silu(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    sig = np.empty_like(ad)
    pos = ad >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    sig[~pos] = ez / (1.0 + ez)
    out_data = ad * sig

    def bwd(g):
        _accum(a, g * (sig + ad * sig * (1.0 - sig)))

    return _make(out_data, (a,), bwd)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out_data = np.logaddexp(np.zeros((), dtype=ad.dtype), ad)
    sig = np.empty_like(ad)
    pos = ad >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-ad[pos]))
    ez = np.exp(ad[~pos])
    sig[~pos] = ez / (1.0 + ez)

    def bwd(g):
        _accum(a, g * sig)

    return _make(out_data, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(old_shape))

    return _make(out_data, (a,), bwd)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return _make(out_data, (a,), bwd)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out_data = np.swapaxes(a.data, ax1, ax2)

    def bwd(g):
        _accum(a, np.swapaxes(g, ax1, ax2))

    return _make(out_data, (a,), bwd)


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)
    out_data = np.flip(a.data, axis=axis)

    def bwd(g):
        _accum(a, np.flip(g, axis=axis))

    return _make(out_data, (a,), bwd)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(out_data, ts, bwd)


def take(a, idx) -> Tensor:
    """Numpy-style indexing; backward scatter-adds into the source."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(out_data, (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.data.shape

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, in_shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, in_shape))

    return _make(out_data, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(
            f"matmul requires operands with ndim >= 2, got {ad.shape} and {bd.shape}"
        )
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} x {bd.shape}")
    try:
        out_data = np.matmul(ad, bd)
    except ValueError as err:
        raise ShapeError(f"matmul shapes incompatible: {ad.shape} x {bd.shape}") from err

    def bwd(g):
        _accum(a, np.matmul(g, np.swapaxes(bd, -1, -2)))
        _accum(b, np.matmul(np.swapaxes(ad, -1, -2), g))

    return _make(out_data, (a, b), bwd)


# ---------------------------------------------------------------------------
# fused neural-network primitives
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Softmax with max-shift; NaN anywhere in the input is rejected."""
    a = as_tensor(a)
    ad = a.data
    if np.isnan(ad).any():
        raise NumericError("softmax input contains NaN")
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - inner))

    return _make(out_data, (a,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = (xd - mu) * inv
    out_data = gamma.data * xn + beta.data

    def bwd(g):
        _accum(gamma, (g * xn).reshape(-1, xd.shape[-1]).sum(axis=0))
        _accum(beta, g.reshape(-1, xd.shape[-1]).sum(axis=0))
        dxn = g * gamma.data
        m1 = dxn.mean(axis=-1, keepdims=True)
        m2 = (dxn * xn).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxn - m1 - xn * m2))

    return _make(out_data, (x, gamma, beta), bwd)


def embedding(table, ids) -> Tensor:
    """Row lookup into `table` by integer array `ids`."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError(
            f"embedding ids out of range [0, {table.data.shape[0]}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    out_data = table.data[ids]

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    return _make(out_data, (table,), bwd)


def masked_nll(logits, targets, weights) -> Tensor:
    """Weighted sum of per-position negative log likelihoods.

    `logits` has vocabulary on the last axis, `targets` are integer ids of
    the same leading shape, and `weights` multiplies each position's NLL
    (zero weight drops the position from both loss and gradient).
    """
    logits = as_tensor(logits)
    ld = logits.data
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=ld.dtype)
    vocab = ld.shape[-1]
    if targets.shape != ld.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} != logits leading {ld.shape[:-1]}")
    if weights.shape != targets.shape:
        raise ShapeError(f"weights shape {weights.shape} != targets shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ContractError(
            f"targets out of range [0, {vocab}): min={targets.min()}, max={targets.max()}"
        )
    m = ld.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(ld - m).sum(axis=-1))
    picked = np.take_along_axis(ld, targets[..., None], axis=-1)[..., 0]
    nll = lse - picked
    out_data = np.asarray((weights.astype(np.float64) * nll.astype(np.float64)).sum(),
                          dtype=ld.dtype)

    def bwd(g):
        p = np.exp(ld - m)
        p /= p.sum(axis=-1, keepdims=True)
        np.subtract.at(p, (*np.indices(targets.shape), targets), 1.0)
        _accum(logits, g * weights[..., None] * p)

    return _make(out_data, (logits,), bwd)


def conv1d(x, kernel, stride: int = 1, causal: bool = False) -> Tensor:
    """Depthwise 1-d convolution along the second-to-last axis.

    `x` is (..., L, D) (a bare (L,) signal is treated as (L, 1)), `kernel`
    is (K, D) with one tap set per channel, or (K,) shared across channels.
    Output length is ceil(L / stride); zero padding is placed entirely on
    the left when `causal`, else split evenly (extra tap on the right).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze_channel = x.data.ndim == 1
    xd = x.data[:, None] if squeeze_channel else x.data
    kd = kernel.data
    if kd.ndim == 1:
        kd = kd[:, None]
    K = kd.shape[0]
    L, D = xd.shape[-2], xd.shape[-1]
    if kd.shape[1] not in (1, D):
        raise ShapeError(f"kernel channels {kd.shape[1]} incompatible with input D={D}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    out_len = -(-L // stride)
    total_pad = max(0, (out_len - 1) * stride + K - L)
    pad_left = total_pad if causal else total_pad // 2
    pad_right = total_pad - pad_left
    pad_spec = [(0, 0)] * (xd.ndim - 2) + [(pad_left, pad_right), (0, 0)]
    xp = np.pad(xd, pad_spec)
    out_data = np.zeros(xd.shape[:-2] + (out_len, D), dtype=np.result_type(xd, kd))
    for k in range(K):
        sl = xp[..., k : k + (out_len - 1) * stride + 1 : stride, :]
        out_data += sl * kd[k]
    if squeeze_channel:
        out_data = out_data[..., 0]

    def bwd(g):
        gd = g[:, None] if squeeze_channel else g
        dxp = np.zeros(xp.shape, dtype=np.result_type(gd, kd))
        dk = np.zeros_like(kd)
        for k in range(K):
            sl = xp[..., k : k + (out_len - 1) * stride + 1 : stride, :]
            dxp[..., k : k + (out_len - 1) * stride + 1 : stride, :] += gd * kd[k]
            axes = tuple(range(gd.ndim - 1))
            if kd.shape[1] == 1:
                dk[k, 0] += (gd * sl).sum()
            else:
                dk[k] += (gd * sl).sum(axis=axes)
        dx = dxp[..., pad_left : pad_left + L, :]
        if squeeze_channel:
            dx = dx[..., 0]
        if kernel.data.ndim == 1:
            dkk = dk[:, 0]
        else:
            dkk = dk
        _accum(x, dx)
        _accum(kernel, dkk)

    return _make(out_data, (x, kernel), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    samples_per_param: int = 6,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare reverse-mode gradients of `f()` with central differences.

    Parameters are temporarily upcast to float64 so the finite-difference
    quotient is not dominated by float32 rounding, then restored. Returns
    the worst relative error max|g_ad - g_fd| / max(|g_ad| + |g_fd|, 1e-8)
    over sampled coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    originals = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = None
    try:
        loss = f()
        backward(loss)
        analytic = [
            np.zeros_like(p.data) if p.grad is None else np.array(p.grad, dtype=np.float64)
            for p in params
        ]
        worst = 0.0
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            ga_flat = ga.reshape(-1)
            n = flat.size
            picks = rng.choice(n, size=min(samples_per_param, n), replace=False)
            for i in picks:
                keep = flat[i]
                flat[i] = keep + eps
                f_plus = float(f().data)
                flat[i] = keep - eps
                f_minus = float(f().data)
                flat[i] = keep
                g_fd = (f_plus - f_minus) / (2.0 * eps)
                denom = max(abs(ga_flat[i]) + abs(g_fd), 1e-8)
                worst = max(worst, abs(ga_flat[i] - g_fd) / denom)
        return worst
    finally:
        for p, original in zip(params, originals):
            p.data = original
            p.grad = None
