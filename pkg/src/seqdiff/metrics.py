"""Text-overlap metrics, schedule entropy, and evaluation reports.

All scores are percentages in [0, 100]. ROUGE-1/2/L are F1 over n-gram
overlap (longest common subsequence for L). BLEU is the geometric mean of
clipped n-gram precisions up to 4 with add-one smoothing on orders >= 2,
times a brevity penalty.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import tokenize
from .diffusion import mask_prob


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: int, hyp_total: int, ref_total: int) -> float:
    if hyp_total == 0 or ref_total == 0:
        return 0.0
    precision = overlap / hyp_total
    recall = overlap / ref_total
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def _lcs_len(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_n(hypothesis: str, reference: str, n: int) -> float:
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    if not hyp and not ref:
        return 100.0
    hc, rc = _ngrams(hyp, n), _ngrams(ref, n)
    overlap = sum(min(c, rc[g]) for g, c in hc.items())
    return _f1(overlap, max(len(hyp) - n + 1, 0), max(len(ref) - n + 1, 0))


def rouge_l(hypothesis: str, reference: str) -> float:
    hyp, ref = tokenize(hypothesis), tokenize(reference)
    if not hyp and not ref:
        return 100.0
    return _f1(_lcs_len(hyp, ref), len(hyp), len(ref))


def bleu(hypotheses: list[str] | str, references: list[str] | str,
         max_order: int = 4) -> float:
    """Corpus BLEU; a single string pair is a one-sentence corpus."""
    if isinstance(hypotheses, str):
        hypotheses = [hypotheses]
    if isinstance(references, str):
        references = [references]
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    overlaps = [0] * max_order
    totals = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for h, r in zip(hypotheses, references):
        ht, rt = tokenize(h), tokenize(r)
        hyp_len += len(ht)
        ref_len += len(rt)
        for n in range(1, max_order + 1):
            hc, rc = _ngrams(ht, n), _ngrams(rt, n)
            overlaps[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(ht) - n + 1, 0)
    log_sum = 0.0
    for n in range(1, max_order + 1):
        o, t = overlaps[n - 1], totals[n - 1]
        if n >= 2:
            o, t = o + 1, t + 1
        if o == 0 or t == 0:
            return 0.0
        log_sum += math.log(o / t)
    geo = math.exp(log_sum / max_order)
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return 100.0 * bp * geo


def schedule_entropy(salience_rows: list[np.ndarray], big_t: int,
                     t_ref: int | None = None) -> dict:
    """Entropy (bits) of where the schedule places masks at t_ref = T // 2.

    Each row holds salience scores for one example's real positions. The
    mask marginals P_{t_ref}(i) are normalized into a distribution over
    positions; rows whose marginals are all zero are skipped and counted.
    Reports the mean entropy, the mean position count's log2 as the
    attainable maximum, and the uniform-schedule reference (identical to
    the maximum).
    """
    t_ref = big_t // 2 if t_ref is None else t_ref
    entropies = []
    lengths = []
    skipped = 0
    for a in salience_rows:
        a = np.asarray(a, dtype=np.float64)
        if a.size == 0:
            skipped += 1
            continue
        p = mask_prob(t_ref, big_t, a)
        total = p.sum()
        if total <= 0:
            skipped += 1
            continue
        q = p / total
        nz = q[q > 0]
        entropies.append(float(-(nz * np.log2(nz)).sum()))
        lengths.append(a.size)
    mean_len = float(np.mean(lengths)) if lengths else 0.0
    return {
        "t_ref": int(t_ref),
        "mean_bits": float(np.mean(entropies)) if entropies else 0.0,
        "max_bits": math.log2(mean_len) if mean_len > 0 else 0.0,
        "n_scored": len(entropies),
        "n_skipped": skipped,
    }


@dataclass
class EvalReport:
    """Aggregate metrics for one evaluation run, JSON-serializable."""

    n_examples: int
    rouge1: float
    rouge2: float
    rougeL: float
    bleu: float
    entropy: dict | None = None
    speed: dict | None = None
    config: dict = field(default_factory=dict)
    per_example: list = field(default_factory=list)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.__dict__, indent=indent, sort_keys=True)


def score_pairs(hypotheses: list[str], references: list[str],
                keep_examples: bool = True) -> EvalReport:
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis and reference counts differ")
    rows = []
    r1 = r2 = rl = 0.0
    for h, r in zip(hypotheses, references):
        s1, s2, sl = rouge_n(h, r, 1), rouge_n(h, r, 2), rouge_l(h, r)
        r1 += s1
        r2 += s2
        rl += sl
        if keep_examples:
            rows.append({"hyp": h, "ref": r, "rouge1": s1, "rouge2": s2, "rougeL": sl})
    n = max(len(hypotheses), 1)
    return EvalReport(
        n_examples=len(hypotheses),
        rouge1=r1 / n,
        rouge2=r2 / n,
        rougeL=rl / n,
        bleu=bleu(hypotheses, references) if hypotheses else 0.0,
        per_example=rows,
    )
