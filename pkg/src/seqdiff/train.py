"""Training loop: three-term diffusion objective plus a length head.

Per step, with t drawn uniformly from {1..T} per example:

    total = L_vb + cls_weight * L_cls + L_ce  (+ length_weight * L_len)

L_vb is the Monte Carlo variational bound, L_cls the source/target summary
similarity (semantic schedule only; target side detached), L_ce plain
cross-entropy on masked positions, and L_len a cross-entropy teaching the
length head. Batch composition and noise draws are functions of (seed,
step) alone, so resuming from a checkpoint reproduces the remaining steps
bit for bit.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import asdict

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    MASK_ID,
    Batch,
    Pair,
    Vocab,
    build_vocab,
    load_jsonl,
    make_batch,
)
from .diffusion import forward_noise, masked_cross_entropy, nelbo, similarity_loss
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .metrics import score_pairs
from .model import Seq2SeqModel
from .optim import AdamW, LrSchedule
from .sampler import sample_batch
from .tensor import Tensor, backward


def loss_terms(model: Seq2SeqModel, batch: Batch, cfg: RunConfig,
               rng: np.random.Generator) -> dict[str, Tensor]:
    """All loss components for one batch; each is a scalar Tensor."""
    bsz = batch.src.shape[0]
    big_t = cfg.diffusion_steps
    enc = model.encode_source(batch.src, batch.src_pad)
    cond = model.make_conditioning(enc, batch.src_pad, batch.tgt.shape[1])
    if cfg.schedule == "semantic":
        salience, summary_tgt = model.target_semantics(batch.tgt, batch.tgt_pad)
        if cfg.disable_similarity_loss:
            l_cls = Tensor(np.float32(0.0))
        else:
            summary_src = model.source_summary(enc, batch.src_pad)
            l_cls = similarity_loss(summary_src, summary_tgt,
                                    detach_target=not cfg.no_detach_target)
    else:
        salience = None
        l_cls = Tensor(np.float32(0.0))
    t = rng.integers(1, big_t + 1, size=bsz)
    maskable = ~batch.tgt_pad
    z_t = forward_noise(batch.tgt, t, big_t, MASK_ID, rng,
                        salience=salience, maskable=maskable)
    logits = model.denoise_logits(z_t, t, cond, batch.tgt_pad)
    l_vb = nelbo(logits, batch.tgt, z_t, t, big_t, MASK_ID,
                 salience=salience, maskable=maskable)
    l_ce = masked_cross_entropy(logits, batch.tgt, z_t, MASK_ID, maskable)
    len_logits = model.predict_length_logits(enc, batch.src_pad)
    l_len = T.masked_nll(len_logits, batch.tgt_len,
                         np.full(bsz, 1.0 / bsz))
    total = l_vb + cfg.cls_weight * l_cls + l_ce + cfg.length_weight * l_len
    return {"total": total, "vb": l_vb, "cls": l_cls, "ce": l_ce, "length": l_len}


def train_step(model: Seq2SeqModel, opt: AdamW, batch: Batch, cfg: RunConfig,
               rng: np.random.Generator) -> dict[str, float]:
    terms = loss_terms(model, batch, cfg, rng)
    total = terms["total"]
    if not np.isfinite(total.data):
        raise NumericError(f"non-finite training loss: {float(total.data)}")
    backward(total)
    opt.step()
    opt.zero_grad()
    return {k: float(v.data) for k, v in terms.items()}


def _step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, step])


def _batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    rng = _step_rng(seed, 0, step)
    return rng.choice(n, size=min(batch_size, n), replace=n < batch_size)


def checkpoint_payload(model: Seq2SeqModel, opt: AdamW, vocab: Vocab,
                       cfg: RunConfig, step: int) -> tuple[dict, dict]:
    tensors: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        tensors[name] = p.data
    for name in model.named_parameters():
        tensors[f"optim.m.{name}"] = opt.m[name]
        tensors[f"optim.v.{name}"] = opt.v[name]
    meta = {
        "kind": "seqdiff-checkpoint",
        "run_config": asdict(cfg),
        "vocab": vocab.tokens,
        "step": step,
        "optim_step": opt.step_count,
    }
    return tensors, meta


def restore_into(model: Seq2SeqModel, opt: AdamW | None,
                 tensors: dict[str, np.ndarray]) -> None:
    params = model.named_parameters()
    missing = [k for k in params if k not in tensors]
    extra = [k for k in tensors
             if not k.startswith("optim.") and k not in params]
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch; missing={missing[:4]} extra={extra[:4]}"
        )
    for name, p in params.items():
        arr = tensors[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for '{name}': checkpoint {arr.shape}, model {p.data.shape}"
            )
        p.data = arr.astype(np.float32, copy=True)
        p.grad = None
    if opt is not None:
        for name in params:
            m_key, v_key = f"optim.m.{name}", f"optim.v.{name}"
            if m_key in tensors:
                opt.m[name] = tensors[m_key].astype(np.float32, copy=True)
            if v_key in tensors:
                opt.v[name] = tensors[v_key].astype(np.float32, copy=True)


def _log(cfg: RunConfig, record: dict, history: list[dict]) -> None:
    history.append(record)
    line = json.dumps(record, sort_keys=True)
    if cfg.metrics_path:
        with open(cfg.metrics_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    print(line, file=sys.stderr)


def evaluate_dev(model: Seq2SeqModel, vocab: Vocab, pairs: list[Pair],
                 cfg: RunConfig, limit: int | None = None, seed: int = 0,
                 use_length_head: bool = False):
    """Decode a dev subset and score it. Reference lengths are used by
    default so metric movement reflects token accuracy, not the length
    head; pass use_length_head=True for fully free generation."""
    subset = pairs[: limit or len(pairs)]
    batch = make_batch(vocab, subset, cfg.max_source_len, cfg.max_target_len)
    lengths = None if use_length_head else batch.tgt_len
    out = sample_batch(model, batch.src, batch.src_pad, cfg.sample_steps,
                       lengths=lengths, seed=seed)
    hyps = [vocab.decode(row) for row in out]
    refs = [p.target for p in subset]
    return score_pairs(hyps, refs, keep_examples=False)


def run_training(cfg: RunConfig, train_pairs: list[Pair] | None = None,
                 dev_pairs: list[Pair] | None = None,
                 quiet: bool = False) -> dict:
    """Full training run; returns {'history': [...], 'model': ..., 'vocab': ...}."""
    cfg.validate()
    if train_pairs is None:
        if not cfg.train_path:
            raise ConfigError("train_path is required")
        train_pairs = load_jsonl(cfg.train_path)
    if dev_pairs is None and cfg.dev_path:
        dev_pairs = load_jsonl(cfg.dev_path)

    start_step = 0
    resume_tensors = None
    resume_meta = None
    if cfg.resume:
        resume_tensors, resume_meta = load_checkpoint(cfg.resume)
        vocab = Vocab(resume_meta["vocab"])
    else:
        vocab = build_vocab(
            [p.source for p in train_pairs] + [p.target for p in train_pairs],
            min_count=cfg.vocab_min_count,
        )
    if len(vocab.tokens) == 0:
        raise DataError("training corpus produced an empty vocabulary")

    model = Seq2SeqModel(cfg.model_config(len(vocab)), np.random.default_rng(cfg.seed))
    opt = AdamW(
        model.named_parameters(),
        LrSchedule(cfg.lr, cfg.warmup_steps, cfg.warmup_start_lr),
        weight_decay=cfg.weight_decay,
    )
    if resume_tensors is not None:
        restore_into(model, opt, resume_tensors)
        start_step = int(resume_meta.get("step", 0))
        opt.step_count = int(resume_meta.get("optim_step", start_step))

    history: list[dict] = []
    n = len(train_pairs)
    t0 = time.time()
    stop_early = False
    done = start_step
    for step in range(start_step, cfg.train_steps):
        idx = _batch_indices(n, cfg.batch_size, cfg.seed, step)
        batch = make_batch(vocab, [train_pairs[i] for i in idx],
                           cfg.max_source_len, cfg.max_target_len)
        losses = train_step(model, opt, batch, cfg, _step_rng(cfg.seed, 1, step))
        done = step + 1
        if done % cfg.log_every == 0 or done == cfg.train_steps:
            rec = {"step": done, "lr": opt.current_lr(),
                   "elapsed_s": round(time.time() - t0, 3)}
            rec.update({f"loss_{k}": round(v, 6) for k, v in losses.items()})
            if not quiet:
                _log(cfg, rec, history)
            else:
                history.append(rec)
        if done % cfg.eval_every == 0 or done == cfg.train_steps:
            if dev_pairs:
                report = evaluate_dev(model, vocab, dev_pairs, cfg,
                                      limit=cfg.eval_samples, seed=cfg.seed)
                rec = {"step": done, "dev_rouge1": round(report.rouge1, 3),
                       "dev_rouge2": round(report.rouge2, 3),
                       "dev_rougeL": round(report.rougeL, 3),
                       "dev_bleu": round(report.bleu, 3)}
                if not quiet:
                    _log(cfg, rec, history)
                else:
                    history.append(rec)
                if cfg.early_stop_rouge_l and report.rougeL >= cfg.early_stop_rouge_l:
                    stop_early = True
            if cfg.checkpoint_path:
                tensors, meta = checkpoint_payload(model, opt, vocab, cfg, done)
                save_checkpoint(cfg.checkpoint_path, tensors, meta)
            if stop_early:
                break
    if cfg.checkpoint_path:
        tensors, meta = checkpoint_payload(model, opt, vocab, cfg, done)
        save_checkpoint(cfg.checkpoint_path, tensors, meta)
    return {"history": history, "model": model, "vocab": vocab, "optimizer": opt}
