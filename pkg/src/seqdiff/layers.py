"""Neural-network building blocks on top of the autodiff engine.

`Module` discovers parameters by walking instance attributes in insertion
order, which fixes a deterministic dotted name for every parameter (used
by the optimizer and the checkpoint format).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix == "" else f"{prefix}.{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}"))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())


def _param(rng: np.random.Generator, shape, std: float) -> Tensor:
    data = (rng.standard_normal(shape) * std).astype(np.float32)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, std: float | None = None, zero_init: bool = False):
        if zero_init:
            self.weight = Tensor(np.zeros((d_in, d_out), dtype=np.float32), requires_grad=True)
        else:
            self.weight = _param(rng, (d_in, d_out), std if std is not None else d_in ** -0.5)
        self.bias = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class Embedding(Module):
    # unit-scale rows keep token identity comparable to the O(1) sinusoidal
    # position and time features added downstream
    def __init__(self, n_rows: int, dim: int, rng: np.random.Generator, std: float = 1.0):
        self.table = _param(rng, (n_rows, dim), std)

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.table, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.w1 = Linear(dim, hidden, rng)
        self.w2 = Linear(hidden, dim, rng, std=hidden ** -0.5)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T.silu(self.w1(x)))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; key padding is masked pre-softmax.

    When `record` is set, the forward pass stores the post-softmax
    attention probabilities (detached, shape (B, H, Lq, Lk)) on
    `self.last_probs` for consumers that need token-level weights.
    """

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        if dim % n_heads != 0:
            raise ConfigError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.wq = Linear(dim, dim, rng)
        # no key bias: softmax is shift-invariant per query row, so a key
        # bias cannot change the output and would sit as a dead parameter
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.last_probs: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, l, _ = x.shape
        return T.transpose(T.reshape(x, (b, l, self.n_heads, self.head_dim)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor, key_pad: np.ndarray | None = None,
                 record: bool = False) -> Tensor:
        b, lq, dim = q_in.shape
        q = self._split(self.wq(q_in))
        k = self._split(self.wk(kv_in))
        v = self._split(self.wv(kv_in))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (self.head_dim ** -0.5)
        if key_pad is not None:
            # key_pad: (B, Lk) True at padding; finite fill keeps softmax defined
            bias = np.where(key_pad[:, None, None, :], -1e9, 0.0).astype(np.float32)
            scores = scores + Tensor(bias)
        probs = T.softmax(scores, axis=-1)
        if record:
            self.last_probs = np.array(probs.data, copy=True)
        ctx = T.matmul(probs, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, lq, dim))
        return self.wo(ctx)


class DepthwiseConv1d(Module):
    """Per-channel convolution along the sequence axis, stride 1."""

    def __init__(self, width: int, channels: int, rng: np.random.Generator,
                 causal: bool = True):
        self.kernel = _param(rng, (width, channels), width ** -0.5)
        self.causal = causal

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.kernel, stride=1, causal=self.causal)


def sinusoidal_embedding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Parameter-free sin/cos features, one row per entry of `positions`."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = positions[..., None] * freqs
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)
    if emb.shape[-1] < dim:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (dim - emb.shape[-1],))], axis=-1)
    return emb.astype(np.float32)
