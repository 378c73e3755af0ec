"""Iterative denoising with confidence-based remasking.

Generation starts from an all-masked canvas and visits a decreasing time
grid t_j = round(T (S - j) / S), j = 0..S. At each step the model
predicts every masked token; the round(L t_{j+1} / T) least confident
predictions stay masked and the rest are committed. Committed tokens are
never revisited, mirroring the absorbing forward process in reverse. The
source is encoded exactly once per sequence.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import BOS_ID, CLS_ID, EOS_ID, MASK_ID, PAD_ID
from .errors import ContractError
from .model import Seq2SeqModel
from .tensor import no_grad

_BANNED_AT_SAMPLING = (PAD_ID, MASK_ID, CLS_ID, BOS_ID)


def plan_steps(big_t: int, n_steps: int) -> list[int]:
    """Time grid from T down to 0 in `n_steps` jumps, endpoints exact."""
    if not 1 <= n_steps <= big_t:
        raise ContractError(f"need 1 <= steps <= T, got steps={n_steps}, T={big_t}")
    grid = [int(round(big_t * (n_steps - j) / n_steps)) for j in range(n_steps + 1)]
    for a, b in zip(grid, grid[1:]):
        if b >= a:
            raise ContractError(f"time grid must strictly decrease, got {grid}")
    return grid


def masked_counts(length: int, grid: list[int], big_t: int) -> list[int]:
    """How many positions remain masked at each grid time: round(L t / T)."""
    if length < 1:
        raise ContractError(f"canvas length must be >= 1, got {length}")
    return [int(round(length * t / big_t)) for t in grid]


def reveal_order(confidence: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Masked positions sorted most-confident first; ties favor low index."""
    idx = np.flatnonzero(masked)
    order = np.argsort(-confidence[idx], kind="stable")
    return idx[order]


def sample_batch(model: Seq2SeqModel, src: np.ndarray, src_pad: np.ndarray,
                 n_steps: int, lengths: np.ndarray | None = None,
                 seed: int = 0, temperature: float = 0.0,
                 trace: list | None = None) -> np.ndarray:
    """Generate canvases for a batch of encoded sources.

    `lengths` gives each example's canvas length (including the end
    marker); None defers to the model's length head. Decoding commits the
    argmax by default; temperature > 0 draws committed tokens from the
    tempered distribution instead (seeded). Passing a list as `trace`
    appends {"t", "canvas"} snapshots after every grid step. Returns
    (B, Lmax) ids padded with PAD beyond each length.
    """
    if temperature < 0:
        raise ContractError(f"temperature must be >= 0, got {temperature}")
    big_t = model.cfg.big_t
    grid = plan_steps(big_t, n_steps)
    bsz = src.shape[0]
    rng = np.random.default_rng([seed, big_t, n_steps])
    with no_grad():
        enc = model.encode_source(src, src_pad)
        if lengths is None:
            len_logits = model.predict_length_logits(enc, src_pad).data
            lengths = len_logits.argmax(axis=-1)
        lengths = np.clip(np.asarray(lengths, dtype=np.int64), 1,
                          model.cfg.max_target_len + 1)
        l_max = int(lengths.max())
        cond = model.make_conditioning(enc, src_pad, l_max)
        canvas = np.full((bsz, l_max), MASK_ID, dtype=np.int64)
        pad = np.arange(l_max)[None, :] >= lengths[:, None]
        canvas[pad] = PAD_ID
        if trace is not None:
            trace.append({"t": grid[0], "canvas": canvas.copy()})
        counts = np.array([masked_counts(int(n), grid, big_t) for n in lengths])
        for j, t in enumerate(grid[:-1]):
            logits = model.denoise_logits(canvas, t, cond, pad).data
            logits = logits.copy()
            logits[..., list(_BANNED_AT_SAMPLING)] = -np.inf
            if temperature > 0:
                logits = logits / temperature
            shifted = logits - logits.max(axis=-1, keepdims=True)
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            if temperature > 0:
                cum = probs.cumsum(axis=-1)
                u = rng.random(cum.shape[:-1])[..., None]
                preds = (u > cum).sum(axis=-1)
            else:
                preds = probs.argmax(axis=-1)
            conf = np.take_along_axis(probs, preds[..., None], axis=-1)[..., 0]
            for b in range(bsz):
                masked = (canvas[b] == MASK_ID) & ~pad[b]
                n_reveal = int(masked.sum()) - int(counts[b, j + 1])
                if n_reveal <= 0:
                    continue
                order = reveal_order(conf[b], masked)
                chosen = order[:n_reveal]
                canvas[b, chosen] = preds[b, chosen]
            if trace is not None:
                trace.append({"t": grid[j + 1], "canvas": canvas.copy()})
    return canvas


def sample_sequence(model: Seq2SeqModel, src_ids, n_steps: int,
                    length: int | None = None, seed: int = 0,
                    temperature: float = 0.0,
                    trace: list | None = None) -> np.ndarray:
    """Single-sequence convenience wrapper around sample_batch."""
    src = np.asarray(src_ids, dtype=np.int64)[None, :]
    src_pad = np.zeros_like(src, dtype=bool)
    lengths = None if length is None else np.array([length], dtype=np.int64)
    out = sample_batch(model, src, src_pad, n_steps, lengths=lengths, seed=seed,
                       temperature=temperature, trace=trace)
    row = out[0]
    return row[row != PAD_ID]
