"""Encoder-to-decoder conditioning for state-space backbones.

A cross scan reuses the selective-scan recurrence but draws its
input-dependent system matrices (B, C, dt) from aligned encoder states
instead of from the decoder sequence, so the recurrent state carries
source information into every decoder position. Encoder and decoder
lengths are reconciled by a strided depthwise convolution over the
encoder states followed by a keep-the-last-rows rule.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .layers import LayerNorm, Linear, Module
from .ssm import S6Projections, SsmCore, _scan_op, init_state_matrix
from .tensor import Tensor


def align_length(m: int, stride: int) -> int:
    """Output row count of the compression conv: ceil(m / stride)."""
    return -(-m // stride)


class EncoderAligner(Module):
    """Compress (B, M, D) encoder states to exactly L decoder rows.

    Padding rows are zeroed first so they cannot bleed through the
    convolution. With stride 1 the states pass through unchanged (no
    parameters involved); otherwise a learned depthwise kernel of width
    equal to the stride averages each window. If compression leaves more
    rows than needed the last L are kept; if fewer, zero rows pad the end.
    """

    def __init__(self, dim: int, stride: int, rng: np.random.Generator):
        if stride < 1:
            raise ShapeError(f"aligner stride must be >= 1, got {stride}")
        self.stride = stride
        if stride > 1:
            init = np.full((stride, dim), 1.0 / stride, dtype=np.float32)
            init += (rng.standard_normal((stride, dim)) * 0.02).astype(np.float32)
            self.kernel = Tensor(init, requires_grad=True)
        else:
            self.kernel = None

    def __call__(self, enc_states: Tensor, src_pad: np.ndarray, l_tgt: int) -> Tensor:
        bsz, m, dim = enc_states.shape
        keep = Tensor((~np.asarray(src_pad, dtype=bool))[..., None].astype(np.float32))
        x = enc_states * keep
        if self.stride > 1:
            x = T.conv1d(x, self.kernel, stride=self.stride, causal=False)
        n_rows = x.shape[1]
        if n_rows >= l_tgt:
            return T.take(x, (slice(None), slice(n_rows - l_tgt, n_rows), slice(None)))
        pad = Tensor(np.zeros((bsz, l_tgt - n_rows, dim), dtype=np.float32))
        return T.concat([x, pad], axis=1)


def align_encoder_states(enc_states, src_pad, l_tgt: int, aligner: EncoderAligner) -> Tensor:
    """Functional wrapper over EncoderAligner."""
    return aligner(T.as_tensor(enc_states), src_pad, l_tgt)


class CrossScan(Module):
    """Selective scan over decoder inputs with encoder-derived dynamics.

    B, C, and dt come from the aligned encoder states (one row per decoder
    position); the scanned input is the decoder sequence itself. The state
    chain is independent of the self branch. Both directions share A and
    the projections; their features are concatenated and mixed back to D.
    """

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 parallel_scan: bool = False):
        self.s6 = S6Projections(dim, state_size, rng)
        self.A = init_state_matrix(dim, state_size)
        self.mix = Linear(2 * dim, dim, rng)
        self.parallel_scan = parallel_scan

    def __call__(self, x: Tensor, enc_aligned: Tensor) -> Tensor:
        if x.shape[:2] != enc_aligned.shape[:2]:
            raise ShapeError(
                f"decoder input {x.shape} and aligned encoder states "
                f"{enc_aligned.shape} disagree on (batch, length)"
            )
        Bm, C, dt = self.s6(enc_aligned)
        fwd = _scan_op(x, Bm, C, dt, self.A, parallel=self.parallel_scan)
        bwd = _scan_op(T.flip(x, axis=1), T.flip(Bm, axis=1), T.flip(C, axis=1),
                       T.flip(dt, axis=1), self.A, parallel=self.parallel_scan)
        return self.mix(T.concat([fwd, T.flip(bwd, axis=1)], axis=-1))


class CrossSsmBlock(Module):
    """Decoder block: parallel self scan and cross scan, fused additively.

    out = x + fuse(concat(self_core(norm(x)), cross(norm(x), enc))). The
    fuse map starts as [I | 0] so an untrained block reduces to the plain
    self branch, keeping early training stable.
    """

    def __init__(self, dim: int, state_size: int, rng: np.random.Generator,
                 conv_width: int = 4, expand: int = 2, parallel_scan: bool = False):
        self.norm = LayerNorm(dim)
        self.self_core = SsmCore(dim, state_size, rng, conv_width=conv_width,
                                 expand=expand, bidirectional=True,
                                 parallel_scan=parallel_scan)
        self.cross = CrossScan(dim, state_size, rng, parallel_scan=parallel_scan)
        fuse = np.concatenate(
            [np.eye(dim, dtype=np.float32), np.zeros((dim, dim), dtype=np.float32)], axis=0
        )
        self.fuse = Linear(2 * dim, dim, rng)
        self.fuse.weight.data[:] = fuse

    def __call__(self, x: Tensor, enc_aligned: Tensor) -> Tensor:
        normed = self.norm(x)
        self_out = self.self_core(normed)
        cross_out = self.cross(normed, enc_aligned)
        return x + self.fuse(T.concat([self_out, cross_out], axis=-1))


def crossmamba_block(x, enc_aligned, block: CrossSsmBlock) -> Tensor:
    """Functional form of CrossSsmBlock."""
    return block(T.as_tensor(x), T.as_tensor(enc_aligned))
