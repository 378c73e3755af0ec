"""Wall-clock benchmarks for generation cost versus sequence length.

Times a single denoising pass (one call to the model on a fully masked
canvas) across canvas lengths, and whole sampling runs across step
budgets. Short calls are repeated in an inner loop until they exceed the
timer floor, so coarse clocks cannot zero out a cell.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .data import MASK_ID
from .model import ModelConfig, Seq2SeqModel
from .sampler import sample_batch
from .tensor import no_grad

TIMER_FLOOR_S = 5e-3


def time_call(fn, runs: int = 20, warmup: int = 2) -> float:
    """Median seconds per call over `runs` measurements."""
    for _ in range(warmup):
        fn()
    start = time.perf_counter()
    fn()
    first = time.perf_counter() - start
    inner = max(1, math.ceil(TIMER_FLOOR_S / max(first, 1e-9)))
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - start) / inner)
    return float(np.median(samples))


def fit_loglog_slope(lengths, times) -> float:
    """Least-squares slope of log(time) against log(length)."""
    x = np.log(np.asarray(lengths, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    x = x - x.mean()
    return float((x * y).sum() / (x * x).sum())


def _bench_source(cfg: ModelConfig, rng: np.random.Generator, src_len: int = 24):
    ids = rng.integers(6, cfg.vocab_size, size=(1, src_len)).astype(np.int64)
    pad = np.zeros_like(ids, dtype=bool)
    return ids, pad


def step_time(model: Seq2SeqModel, length: int, runs: int = 20,
              seed: int = 0) -> float:
    """Median seconds for one denoising pass over a length-L masked canvas."""
    rng = np.random.default_rng(seed)
    src, src_pad = _bench_source(model.cfg, rng)
    canvas = np.full((1, length), MASK_ID, dtype=np.int64)
    pad = np.zeros_like(canvas, dtype=bool)
    with no_grad():
        enc = model.encode_source(src, src_pad)
        cond = model.make_conditioning(enc, src_pad, length)

        def one_pass():
            model.denoise_logits(canvas, model.cfg.big_t, cond, pad)

        return time_call(one_pass, runs=runs)


def sample_time(model: Seq2SeqModel, length: int, n_steps: int, runs: int = 20,
                seed: int = 0) -> float:
    """Median seconds for a full sampling run at a fixed canvas length."""
    rng = np.random.default_rng(seed)
    src, src_pad = _bench_source(model.cfg, rng)
    lengths = np.array([length], dtype=np.int64)

    def one_run():
        sample_batch(model, src, src_pad, n_steps, lengths=lengths, seed=seed)

    return time_call(one_run, runs=runs)


@dataclass
class BenchReport:
    rows: list[dict]
    slopes: dict[str, float]
    step_ratios: dict[str, float]

    def to_csv(self) -> str:
        lines = ["backbone,length,steps,median_seconds"]
        for row in self.rows:
            lines.append(
                f"{row['backbone']},{row['length']},{row['steps']},{row['median_seconds']:.6g}"
            )
        for name, slope in sorted(self.slopes.items()):
            lines.append(f"# loglog_slope {name} {slope:.4f}")
        for name, ratio in sorted(self.step_ratios.items()):
            lines.append(f"# step_ratio {name} {ratio:.4f}")
        return "\n".join(lines) + "\n"


def speed_bench(models: dict[str, Seq2SeqModel], lengths, steps_list,
                runs: int = 20, seed: int = 0) -> BenchReport:
    """Grid of sampling times plus per-step scaling fits per backbone.

    The scaling slope is fit on single-pass times so the step budget does
    not confound it; the step ratio compares full runs at the largest and
    smallest step budgets at the shortest length.
    """
    lengths = list(lengths)
    steps_list = list(steps_list)
    rows = []
    slopes = {}
    ratios = {}
    for name, model in models.items():
        for length in lengths:
            for n_steps in steps_list:
                median = sample_time(model, length, n_steps, runs=runs, seed=seed)
                rows.append({
                    "backbone": name,
                    "length": length,
                    "steps": n_steps,
                    "median_seconds": median,
                })
        per_step = [step_time(model, length, runs=runs, seed=seed) for length in lengths]
        slopes[name] = fit_loglog_slope(lengths, per_step)
        if len(steps_list) >= 2:
            lo, hi = min(steps_list), max(steps_list)
            t_lo = next(r["median_seconds"] for r in rows
                        if r["backbone"] == name and r["length"] == lengths[0]
                        and r["steps"] == lo)
            t_hi = next(r["median_seconds"] for r in rows
                        if r["backbone"] == name and r["length"] == lengths[0]
                        and r["steps"] == hi)
            ratios[name] = t_hi / t_lo
    return BenchReport(rows=rows, slopes=slopes, step_ratios=ratios)
