"""Absorbing-state discrete diffusion over token sequences.

Tokens transition irreversibly to a dedicated mask id. The process is
specified by per-position marginal mask probabilities P_t(i):

    uniform            P_t(i) = t / T
    semantic, score a  P_t(i) = clip(t/T - (1 - t/T) * a_i, 0, 1)

with a_i in [0, 1]; high-score positions stay visible longer (a_i = 1 is
unmasked through t = T/2) and every position is surely masked at t = T.
The per-step hazard beta_t(i) = (P_t - P_{t-1}) / (1 - P_{t-1}) realizes
these marginals as a Markov chain, so forward sampling can jump straight
to the marginal at any t.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor


def _check_t(t, big_t: int) -> np.ndarray:
    t = np.asarray(t)
    if big_t < 1:
        raise ContractError(f"T must be >= 1, got {big_t}")
    if t.size and (t.min() < 0 or t.max() > big_t):
        raise ContractError(f"t must lie in [0, {big_t}], got range [{t.min()}, {t.max()}]")
    return t


def mask_prob(t, big_t: int, salience=None) -> np.ndarray:
    """Marginal mask probability P_t per position.

    `t` broadcasts against `salience` (salience None means the uniform
    schedule). Scores outside [0, 1] are rejected.
    """
    t = _check_t(t, big_t)
    base = t / float(big_t)
    if salience is None:
        return np.asarray(base, dtype=np.float64)
    a = np.asarray(salience, dtype=np.float64)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ContractError(f"salience scores must lie in [0, 1], got [{a.min()}, {a.max()}]")
    base = np.asarray(base, dtype=np.float64)
    if base.ndim:
        base = base[..., None]
    return np.clip(base - (1.0 - base) * a, 0.0, 1.0)


def step_beta(t, big_t: int, salience=None) -> np.ndarray:
    """Per-step mask hazard beta_t = (P_t - P_{t-1}) / (1 - P_{t-1}).

    Defined for t >= 1; positions already surely masked (P_{t-1} = 1)
    get beta = 1.
    """
    t = np.asarray(t)
    if t.size and t.min() < 1:
        raise ContractError(f"step_beta needs t >= 1, got min {t.min()}")
    p_now = mask_prob(t, big_t, salience)
    p_prev = mask_prob(t - 1, big_t, salience)
    denom = 1.0 - p_prev
    saturated = denom <= 0.0
    beta = np.where(saturated, 1.0, (p_now - p_prev) / np.where(saturated, 1.0, denom))
    return np.clip(beta, 0.0, 1.0)


def keep_prob(t, big_t: int, salience=None) -> np.ndarray:
    """k_t = 1 - P_t, the probability a position is still visible at t."""
    return 1.0 - mask_prob(t, big_t, salience)


def _as_grid(p, shape: tuple[int, ...]) -> np.ndarray:
    """Broadcast per-example values onto a (B, L) grid, expanding on the right."""
    p = np.asarray(p)
    if p.ndim < len(shape):
        p = p.reshape(p.shape + (1,) * (len(shape) - p.ndim))
    return np.broadcast_to(p, shape)


def forward_noise(tokens: np.ndarray, t, big_t: int, mask_id: int,
                  rng: np.random.Generator, salience=None,
                  maskable: np.ndarray | None = None) -> np.ndarray:
    """Sample z_t directly from the marginal: mask position i w.p. P_t(i).

    `tokens` is (B, L) integer ids, `t` scalar or (B,), `salience` (B, L)
    or None, `maskable` (B, L) bool (False rows, e.g. padding, are left
    untouched).
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError(f"tokens must be (B, L), got {tokens.shape}")
    p = _as_grid(mask_prob(t, big_t, salience), tokens.shape)
    u = rng.random(tokens.shape)
    hit = u < p
    if maskable is not None:
        hit = hit & np.asarray(maskable, dtype=bool)
    out = tokens.copy()
    out[hit] = mask_id
    return out


def reveal_probs(t: int, s: int, big_t: int, salience=None) -> tuple[np.ndarray, np.ndarray]:
    """Posterior q(z_s | z_t = mask, x) for s < t.

    Returns (p_reveal, p_stay): a masked position reveals its original
    token with (k_s - k_t) / (1 - k_t) and stays masked otherwise.
    Positions that cannot be masked at t (P_t = 0) report p_reveal = 0.
    """
    if not 0 <= s < t <= big_t:
        raise ContractError(f"need 0 <= s < t <= T, got s={s}, t={t}, T={big_t}")
    k_t = keep_prob(t, big_t, salience)
    k_s = keep_prob(s, big_t, salience)
    denom = 1.0 - k_t
    zero = denom <= 0.0
    reveal = np.where(zero, 0.0, (k_s - k_t) / np.where(zero, 1.0, denom))
    reveal = np.clip(reveal, 0.0, 1.0)
    return reveal, 1.0 - reveal


def nelbo_weights(z_t: np.ndarray, t, big_t: int, mask_id: int,
                  salience=None, maskable: np.ndarray | None = None) -> np.ndarray:
    """Per-position weights for the single-sample variational bound.

    With x0-parameterized reverse model, the KL at step t collapses to
    alpha * (-log p(x_i | z_t)) on masked positions, alpha = (P_t -
    P_{t-1}) / P_t (alpha = 1 at t = 1, recovering the reconstruction
    term). Unmasked positions contribute zero. The weights returned here
    are T * alpha on masked maskable positions, matching a uniform
    t ~ {1..T} Monte Carlo estimate of the summed bound; the prior term
    at t = T is identically zero because P_T = 1 for every schedule.
    """
    z_t = np.asarray(z_t)
    t_arr = np.asarray(t)
    if t_arr.size and t_arr.min() < 1:
        raise ContractError(f"nelbo needs t >= 1, got min {t_arr.min()}")
    p_now_b = _as_grid(mask_prob(t_arr, big_t, salience), z_t.shape)
    p_prev_b = _as_grid(mask_prob(t_arr - 1, big_t, salience), z_t.shape)
    masked = z_t == mask_id
    if maskable is not None:
        masked = masked & np.asarray(maskable, dtype=bool)
    safe = np.where(p_now_b <= 0.0, 1.0, p_now_b)
    alpha = np.where(p_now_b <= 0.0, 0.0, (p_now_b - p_prev_b) / safe)
    return big_t * alpha * masked


def nelbo(logits: Tensor, x0: np.ndarray, z_t: np.ndarray, t, big_t: int,
          mask_id: int, salience=None, maskable: np.ndarray | None = None) -> Tensor:
    """Monte Carlo variational bound, averaged over the batch."""
    w = nelbo_weights(z_t, t, big_t, mask_id, salience, maskable)
    bsz = np.asarray(z_t).shape[0]
    return T.masked_nll(logits, x0, w / bsz)


def masked_cross_entropy(logits: Tensor, x0: np.ndarray, z_t: np.ndarray,
                         mask_id: int, maskable: np.ndarray | None = None) -> Tensor:
    """Mean NLL over masked (non-pad) positions; zero if none are masked."""
    masked = np.asarray(z_t) == mask_id
    if maskable is not None:
        masked = masked & np.asarray(maskable, dtype=bool)
    count = int(masked.sum())
    if count == 0:
        return Tensor(np.float32(0.0))
    return T.masked_nll(logits, x0, masked.astype(np.float64) / count)


def similarity_loss(summary_src: Tensor, summary_tgt: Tensor,
                    detach_target: bool = True) -> Tensor:
    """1 - cosine(summary_src, summary_tgt), averaged over the batch.

    The target-side summary is detached by default so this loss shapes
    the source representation only; `detach_target=False` is an ablation
    hook that lets gradients reach the target branch too.
    """
    if summary_src.shape != summary_tgt.shape:
        raise ShapeError(
            f"summary shapes differ: {summary_src.shape} vs {summary_tgt.shape}"
        )
    tgt = summary_tgt.detach() if detach_target else summary_tgt
    dot = (summary_src * tgt).sum(axis=-1)
    ns = T.sqrt((summary_src * summary_src).sum(axis=-1) + 1e-12)
    nt = T.sqrt((tgt * tgt).sum(axis=-1) + 1e-12)
    cos = dot / (ns * nt)
    return (1.0 - cos).mean()
