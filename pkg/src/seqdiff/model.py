"""Encoder-decoder denoising model with two interchangeable backbones.

The transformer variant conditions through cross-attention and also
exposes the attention view used by the semantic noising schedule: the
summary-token query row of the final encoder layer scores every target
position. The state-space variant conditions through cross scans over
aligned encoder states and has no attention view, so it only supports
the uniform schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cross_ssm import CrossSsmBlock, EncoderAligner
from .data import BOS_ID, CLS_ID, EOS_ID, MASK_ID, PAD_ID
from .errors import ConfigError, ShapeError
from .layers import (
    Embedding,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    sinusoidal_embedding,
)
from .ssm import MambaBlock
from .tensor import Tensor

BACKBONES = ("transformer", "mamba")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    backbone: str = "transformer"
    dim: int = 256
    n_heads: int = 4
    enc_layers: int = 8
    dec_layers: int = 8
    ffn_mult: int = 4
    state_size: int = 16
    conv_width: int = 4
    expand: int = 2
    max_source_len: int = 64
    max_target_len: int = 16
    big_t: int = 50

    def validate(self) -> None:
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        for field in ("vocab_size", "dim", "enc_layers", "dec_layers", "state_size",
                      "conv_width", "expand", "max_source_len", "max_target_len",
                      "big_t", "ffn_mult", "n_heads"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be >= 1, got {getattr(self, field)}")
        if self.backbone == "transformer" and self.dim % self.n_heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")


class TransformerEncoderLayer(Module):
    def __init__(self, dim: int, n_heads: int, ffn_mult: int, rng):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim, rng)

    def __call__(self, x, pad, record=False):
        n = self.norm1(x)
        x = x + self.attn(n, n, key_pad=pad, record=record)
        return x + self.ffn(self.norm2(x))


class TransformerEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.emb = Embedding(cfg.vocab_size, cfg.dim, rng)
        self.layers = [TransformerEncoderLayer(cfg.dim, cfg.n_heads, cfg.ffn_mult, rng)
                       for _ in range(cfg.enc_layers)]
        self.final_norm = LayerNorm(cfg.dim)
        max_len = max(cfg.max_source_len, cfg.max_target_len) + 8
        self._pos = sinusoidal_embedding(np.arange(max_len), cfg.dim)
        self.last_attn: np.ndarray | None = None

    def __call__(self, ids: np.ndarray, pad: np.ndarray, record_attn: bool = False):
        length = ids.shape[1]
        x = self.emb(ids) + Tensor(self._pos[:length])
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x, pad, record=record_attn and i == last)
        if record_attn:
            self.last_attn = self.layers[last].attn.last_probs
        return self.final_norm(x)


class TransformerDecoderLayer(Module):
    def __init__(self, dim: int, n_heads: int, ffn_mult: int, rng):
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm2 = LayerNorm(dim)
        self.cross_attn = MultiHeadAttention(dim, n_heads, rng)
        self.norm3 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim, rng)

    def __call__(self, x, tgt_pad, enc_states, src_pad):
        n = self.norm1(x)
        x = x + self.self_attn(n, n, key_pad=tgt_pad)
        x = x + self.cross_attn(self.norm2(x), enc_states, key_pad=src_pad)
        return x + self.ffn(self.norm3(x))


class MambaEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.emb = Embedding(cfg.vocab_size, cfg.dim, rng)
        self.blocks = [MambaBlock(cfg.dim, cfg.state_size, rng, conv_width=cfg.conv_width,
                                  expand=cfg.expand, bidirectional=True)
                       for _ in range(cfg.enc_layers)]
        self.final_norm = LayerNorm(cfg.dim)

    def __call__(self, ids, pad, record_attn: bool = False):
        if record_attn:
            raise ConfigError("state-space encoder has no attention scores to record")
        x = self.emb(ids)
        mask = Tensor((~np.asarray(pad, dtype=bool))[..., None].astype(np.float32))
        x = x * mask
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)


class Seq2SeqModel(Module):
    """Shared encoder, diffusion decoder, and a target-length head.

    `encoder_calls` counts source encodings; sampling is expected to
    encode each source exactly once regardless of the number of
    denoising steps.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        dim = cfg.dim
        if cfg.backbone == "transformer":
            self.encoder = TransformerEncoder(cfg, rng)
            self.dec_emb = Embedding(cfg.vocab_size, dim, rng)
            self.dec_layers = [TransformerDecoderLayer(dim, cfg.n_heads, cfg.ffn_mult, rng)
                               for _ in range(cfg.dec_layers)]
            self.aligner = None
        else:
            self.encoder = MambaEncoder(cfg, rng)
            self.dec_emb = Embedding(cfg.vocab_size, dim, rng)
            self.dec_layers = [CrossSsmBlock(dim, cfg.state_size, rng,
                                             conv_width=cfg.conv_width, expand=cfg.expand)
                               for _ in range(cfg.dec_layers)]
            stride = max(1, math.ceil((cfg.max_source_len + 2) / (cfg.max_target_len + 1)))
            self.aligner = EncoderAligner(dim, stride, rng)
        self.dec_norm = LayerNorm(dim)
        self.head = Linear(dim, cfg.vocab_size, rng, std=dim ** -0.5)
        self.length_head = Linear(dim, cfg.max_target_len + 2, rng, std=dim ** -0.5)
        max_len = max(cfg.max_source_len, cfg.max_target_len) + 8
        self._pos = sinusoidal_embedding(np.arange(max_len), dim)
        self._time = sinusoidal_embedding(np.arange(cfg.big_t + 1), dim)
        self.encoder_calls = 0

    # -- encoding ------------------------------------------------------
    def encode_source(self, src_ids: np.ndarray, src_pad: np.ndarray,
                      record_attn: bool = False) -> Tensor:
        self.encoder_calls += 1
        return self.encoder(src_ids, src_pad, record_attn=record_attn)

    def source_summary(self, enc_states: Tensor, src_pad: np.ndarray) -> Tensor:
        """Per-sequence summary vector for the similarity loss."""
        if self.cfg.backbone == "transformer":
            return T.take(enc_states, (slice(None), 0, slice(None)))
        keep = (~np.asarray(src_pad, dtype=bool)).astype(np.float32)
        denom = np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
        w = Tensor((keep / denom)[..., None])
        return (enc_states * w).sum(axis=1)

    def target_semantics(self, canvas_ids: np.ndarray,
                         canvas_pad: np.ndarray) -> tuple[np.ndarray, Tensor]:
        """Salience scores over canvas positions plus the summary state.

        Prepends the summary token, encodes, and reads the summary row of
        the final layer's attention, head-averaged. Scores at special or
        padded positions are zeroed (unknown-token positions stay real),
        then each row is rescaled by its maximum into [0, 1]. Returns
        (salience, summary) with salience detached from the graph.
        """
        if self.cfg.backbone != "transformer":
            raise ConfigError(
                "semantic salience needs attention scores; the state-space "
                "backbone does not produce them"
            )
        bsz, length = canvas_ids.shape
        ids = np.concatenate(
            [np.full((bsz, 1), CLS_ID, dtype=canvas_ids.dtype), canvas_ids], axis=1
        )
        pad = np.concatenate([np.zeros((bsz, 1), dtype=bool), canvas_pad], axis=1)
        states = self.encode_source(ids, pad, record_attn=True)
        attn = self.encoder.last_attn  # (B, H, 1+L, 1+L), detached copy
        scores = attn[:, :, 0, 1:].mean(axis=1).astype(np.float64)
        special = np.isin(canvas_ids, (PAD_ID, MASK_ID, CLS_ID, BOS_ID, EOS_ID))
        scores[special | np.asarray(canvas_pad, dtype=bool)] = 0.0
        peak = scores.max(axis=1, keepdims=True)
        scores = np.divide(scores, peak, out=np.zeros_like(scores), where=peak > 0)
        summary = T.take(states, (slice(None), 0, slice(None)))
        return scores, summary

    # -- conditioning and decoding --------------------------------------
    def make_conditioning(self, enc_states: Tensor, src_pad: np.ndarray, l_tgt: int):
        """Package encoder output for the decoder, once per source."""
        if self.cfg.backbone == "transformer":
            return (enc_states, np.asarray(src_pad, dtype=bool))
        return self.aligner(enc_states, src_pad, l_tgt)

    def denoise_logits(self, canvas_ids: np.ndarray, t, conditioning,
                       canvas_pad: np.ndarray) -> Tensor:
        """Token logits (B, L, V) for the canvas at diffusion time t."""
        canvas_ids = np.asarray(canvas_ids)
        bsz, length = canvas_ids.shape
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (bsz,))
        time = Tensor(self._time[t_arr][:, None, :])
        x = self.dec_emb(canvas_ids) + time
        if self.cfg.backbone == "transformer":
            enc_states, src_pad = conditioning
            x = x + Tensor(self._pos[:length])
            for layer in self.dec_layers:
                x = layer(x, np.asarray(canvas_pad, dtype=bool), enc_states, src_pad)
        else:
            if not isinstance(conditioning, Tensor):
                raise ShapeError("state-space decoder expects aligned encoder states")
            if conditioning.shape[1] != length:
                raise ShapeError(
                    f"aligned states length {conditioning.shape[1]} != canvas {length}"
                )
            mask = Tensor((~np.asarray(canvas_pad, dtype=bool))[..., None].astype(np.float32))
            x = x * mask
            for layer in self.dec_layers:
                x = layer(x, conditioning)
        return self.head(self.dec_norm(x))

    def predict_length_logits(self, enc_states: Tensor, src_pad: np.ndarray) -> Tensor:
        """Logits over canvas lengths 0..max_target_len+1 from pooled states."""
        keep = (~np.asarray(src_pad, dtype=bool)).astype(np.float32)
        denom = np.maximum(keep.sum(axis=1, keepdims=True), 1.0)
        w = Tensor((keep / denom)[..., None])
        pooled = (enc_states * w).sum(axis=1)
        return self.length_head(pooled)


def build_model(cfg: ModelConfig, seed: int = 0) -> Seq2SeqModel:
    return Seq2SeqModel(cfg, np.random.default_rng(seed))
