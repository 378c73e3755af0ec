"""Metric oracles: hand-computed overlap scores, smoothed corpus BLEU, and
schedule entropy on known distributions."""

import json
import math

import numpy as np
import pytest

from seqdiff.metrics import (
    EvalReport,
    bleu,
    rouge_l,
    rouge_n,
    schedule_entropy,
    score_pairs,
)

HYP = "the cat sat on the mat"
REF = "the cat lay on the mat"


def test_rouge1_worked_example():
    # unigram overlap 5 of 6 on both sides: F1 = 5/6 = 83.33
    assert rouge_n(HYP, REF, 1) == pytest.approx(100 * 5 / 6, abs=1e-9)


def test_rouge2_worked_example():
    # bigrams: hyp {the cat, cat sat, sat on, on the, the mat},
    # ref swaps sat for lay, so 3 of 5 match
    assert rouge_n(HYP, REF, 2) == pytest.approx(100 * 3 / 5, abs=1e-9)


def test_rouge_l_worked_example():
    # LCS "the cat on the mat" has length 5 over len-6 sequences
    assert rouge_l(HYP, REF) == pytest.approx(100 * 5 / 6, abs=1e-9)


def test_rouge_identical_and_disjoint():
    assert rouge_n("a b c", "a b c", 1) == pytest.approx(100.0)
    assert rouge_n("a b", "c d", 1) == 0.0
    assert rouge_l("", "a b") == 0.0
    assert rouge_l("", "") == 100.0
    assert rouge_n("", "", 2) == 100.0
    assert rouge_n("a", "a", 2) == 0.0  # no bigrams exist


def test_rouge_short_worked_pair():
    # "the cat sat" vs "the cat ran": 2 of 3 unigrams, 1 of 2 bigrams,
    # LCS "the cat"
    assert rouge_n("the cat sat", "the cat ran", 1) == pytest.approx(200 / 3, abs=1e-9)
    assert rouge_n("the cat sat", "the cat ran", 2) == pytest.approx(50.0, abs=1e-9)
    assert rouge_l("the cat sat", "the cat ran") == pytest.approx(200 / 3, abs=1e-9)


def test_rouge_l_is_order_sensitive():
    assert rouge_l("a b c d", "d c b a") == pytest.approx(100 / 4, abs=1e-9)


def test_bleu_perfect_and_empty():
    assert bleu("a b c d e", "a b c d e") == pytest.approx(100.0, abs=1e-6)
    assert bleu("", "a b") == 0.0
    assert bleu("a b", "a b c d") < bleu("a b c d", "a b c d")


def test_bleu_worked_example_with_smoothing():
    # "a b c d" vs "a b c e": p1 = 3/4, p2 = (2+1)/(3+1), p3 = (1+1)/(2+1),
    # p4 = (0+1)/(1+1); equal lengths so no brevity penalty
    expect = 100 * (3 / 4 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    assert bleu("a b c d", "a b c e") == pytest.approx(expect, abs=1e-9)
    assert bleu("a b c d", "a b c e") == pytest.approx(65.80370064762462, abs=1e-6)
    # longer pair: p1 = 5/6, p2 = (3+1)/(5+1), p3 = (1+1)/(4+1),
    # p4 = (0+1)/(3+1)
    expect2 = 100 * (5 / 6 * 4 / 6 * 2 / 5 * 1 / 4) ** 0.25
    assert bleu(HYP, REF) == pytest.approx(expect2, abs=1e-9)


def test_bleu_brevity_penalty():
    # hyp shorter than ref: multiply by exp(1 - ref/hyp)
    val = bleu("a b c d", "a b c d e f g")
    full = 100 * ((4 / 4) * (3 + 1) / (3 + 1) * (2 + 1) / (2 + 1) * (1 + 1) / (1 + 1)) ** 0.25
    assert val == pytest.approx(full * math.exp(1 - 7 / 4), abs=1e-6)


def test_bleu_is_corpus_level_not_mean_of_sentences():
    hyps = ["a b", "a b c d e f g h"]
    refs = ["a b", "a b c d e f g h"]
    corpus = bleu(hyps, refs)
    assert corpus == pytest.approx(100.0, abs=1e-6)
    with pytest.raises(ValueError):
        bleu(["a"], ["a", "b"])


def test_schedule_entropy_uniform_is_max():
    rows = [np.zeros(8) for _ in range(4)]
    out = schedule_entropy(rows, big_t=10)
    assert out["t_ref"] == 5
    assert out["mean_bits"] == pytest.approx(3.0, abs=1e-9)
    assert out["max_bits"] == pytest.approx(3.0, abs=1e-9)
    assert out["n_scored"] == 4 and out["n_skipped"] == 0


def test_schedule_entropy_concentrated_is_lower():
    # salience 1 on all but one position: at t = T/2 only the plain
    # position has nonzero marginal, entropy 0
    row = np.array([1.0, 1.0, 1.0, 0.0])
    out = schedule_entropy([row], big_t=10)
    assert out["mean_bits"] == pytest.approx(0.0, abs=1e-9)
    assert out["max_bits"] == pytest.approx(2.0, abs=1e-9)


def test_schedule_entropy_known_two_level():
    # marginals (0.5, 0.25) normalize to (2/3, 1/3): H = log2(3) - 2/3
    row = np.array([0.0, 0.5])
    out = schedule_entropy([row], big_t=8, t_ref=4)
    assert out["mean_bits"] == pytest.approx(math.log2(3) - 2 / 3, abs=1e-9)


def test_schedule_entropy_skips_fully_salient_rows():
    out = schedule_entropy([np.ones(5), np.zeros(3), np.array([])], big_t=8)
    assert out["n_scored"] == 1 and out["n_skipped"] == 2


def test_score_pairs_aggregates_and_serializes():
    rep = score_pairs([HYP, REF], [REF, REF])
    assert rep.n_examples == 2
    assert rep.rougeL == pytest.approx((100 * 5 / 6 + 100.0) / 2, abs=1e-9)
    assert len(rep.per_example) == 2
    blob = json.loads(rep.to_json())
    assert blob["n_examples"] == 2 and "rougeL" in blob
    with pytest.raises(ValueError):
        score_pairs(["a"], [])


def test_eval_report_roundtrips_optional_sections():
    rep = EvalReport(n_examples=0, rouge1=0, rouge2=0, rougeL=0, bleu=0,
                     entropy={"mean_bits": 1.5}, speed={"ms": 2.0})
    blob = json.loads(rep.to_json(indent=None))
    assert blob["entropy"]["mean_bits"] == 1.5 and blob["speed"]["ms"] == 2.0
