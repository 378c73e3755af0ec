"""Tokenization, vocabulary, dataset loading, and synthetic task generators.

Token ids 0..5 are reserved: padding, the diffusion mask, a sequence
summary token, begin/end markers, and unknown. Vocabulary files store one
surface token per line; line k maps to id k + 6.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError

PAD_ID = 0
MASK_ID = 1
CLS_ID = 2
BOS_ID = 3
EOS_ID = 4
UNK_ID = 5
RESERVED = 6

SPECIAL_NAMES = {
    PAD_ID: "[PAD]",
    MASK_ID: "[MASK]",
    CLS_ID: "[CLS]",
    BOS_ID: "[BOS]",
    EOS_ID: "[EOS]",
    UNK_ID: "[UNK]",
}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation split; whitespace never survives."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bidirectional token/id map over the reserved prefix."""

    def __init__(self, tokens: list[str]):
        if len(set(tokens)) != len(tokens):
            dupes = [t for t, c in Counter(tokens).items() if c > 1]
            raise DataError(f"duplicate vocabulary entries: {dupes[:5]}")
        self.tokens = list(tokens)
        self._index = {tok: i + RESERVED for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return RESERVED + len(self.tokens)

    def encode_token(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, text: str) -> list[int]:
        return [self.encode_token(t) for t in tokenize(text)]

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i in SPECIAL_NAMES:
                continue
            if i - RESERVED >= len(self.tokens) or i < 0:
                raise DataError(f"id {i} outside vocabulary of size {len(self)}")
            words.append(self.tokens[i - RESERVED])
        return " ".join(words)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls([line for line in text.splitlines() if line])


def build_vocab(texts, min_count: int = 1) -> Vocab:
    """Frequency-then-lexicographic ordering keeps ids deterministic."""
    counts = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = [(tok, c) for tok, c in counts.items() if c >= min_count]
    kept.sort(key=lambda item: (-item[1], item[0]))
    return Vocab([tok for tok, _ in kept])


@dataclass
class Pair:
    source: str
    target: str


def load_jsonl(path) -> list[Pair]:
    """Read {"source": ..., "target": ...} records, one JSON object per line."""
    pairs = []
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DataError(f"{path}:{lineno}: invalid JSON ({err})") from err
            if not isinstance(rec, dict) or "source" not in rec or "target" not in rec:
                raise DataError(f"{path}:{lineno}: record needs 'source' and 'target'")
            pairs.append(Pair(str(rec["source"]), str(rec["target"])))
    if not pairs:
        raise DataError(f"dataset file is empty: {path}")
    return pairs


def write_jsonl(path, pairs) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(json.dumps({"source": p.source, "target": p.target}) + "\n")


def encode_source(vocab: Vocab, text: str, max_len: int) -> list[int]:
    """[CLS] + tokens + [EOS]; overlong sources drop their leading tokens."""
    ids = vocab.encode(text)
    if len(ids) > max_len:
        ids = ids[len(ids) - max_len:]
    return [CLS_ID] + ids + [EOS_ID]


def encode_target(vocab: Vocab, text: str, max_len: int) -> list[int]:
    """tokens + [EOS]; overlong targets drop their trailing tokens."""
    ids = vocab.encode(text)
    if len(ids) > max_len:
        ids = ids[:max_len]
    return ids + [EOS_ID]


@dataclass
class Batch:
    src: np.ndarray        # (B, Ls) int64
    src_pad: np.ndarray    # (B, Ls) bool
    tgt: np.ndarray        # (B, Lt) int64, the diffusion canvas
    tgt_pad: np.ndarray    # (B, Lt) bool
    tgt_len: np.ndarray    # (B,) canvas lengths including the end marker


def _pad_block(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    pad = np.ones((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, :len(row)] = row
        pad[i, :len(row)] = False
    return ids, pad


def make_batch(vocab: Vocab, pairs: list[Pair], max_src: int, max_tgt: int) -> Batch:
    if not pairs:
        raise ContractError("make_batch needs at least one pair")
    srcs = [encode_source(vocab, p.source, max_src) for p in pairs]
    tgts = [encode_target(vocab, p.target, max_tgt) for p in pairs]
    src, src_pad = _pad_block(srcs)
    tgt, tgt_pad = _pad_block(tgts)
    tgt_len = np.array([len(t) for t in tgts], dtype=np.int64)
    return Batch(src, src_pad, tgt, tgt_pad, tgt_len)


def batch_iter(pairs: list[Pair], batch_size: int, seed: int, steps: int):
    """Yield `steps` index arrays, resumable: batch k depends only on (seed, k)."""
    n = len(pairs)
    for step in range(steps):
        rng = np.random.default_rng([seed, step])
        yield rng.choice(n, size=batch_size, replace=n < batch_size)


@dataclass
class SynthSpec:
    """Key-value extraction task parameters.

    Sources render `n_records` key/value records separated by ';', where
    `n_salient` of them carry a leading marker token. The target lists the
    marked records' values in source order. The marker bound must fit the
    smallest record count; violating that is a contract error, as is any
    empty range.
    """

    n_records: tuple[int, int] = (4, 8)
    n_salient: tuple[int, int] = (1, 4)
    n_keys: int = 30
    n_values: int = 60
    marker: str = "sal"
    kind: str = "extract"  # or "copy"
    copy_len: tuple[int, int] = (3, 8)

    def validate(self) -> None:
        for name in ("n_records", "n_salient", "copy_len"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ContractError(f"{name} range ({lo}, {hi}) is invalid")
        if self.kind not in ("extract", "copy"):
            raise ContractError(f"kind must be 'extract' or 'copy', got {self.kind!r}")
        if self.kind == "extract" and self.n_salient[1] > self.n_records[0]:
            raise ContractError(
                f"salient count up to {self.n_salient[1]} cannot exceed the "
                f"minimum record count {self.n_records[0]}"
            )


def synth_task_generate(n: int, seed: int, spec: SynthSpec | None = None) -> list[Pair]:
    """Deterministic synthetic pairs for a given (n, seed, spec)."""
    spec = spec or SynthSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    keys = [f"k{i:02d}" for i in range(spec.n_keys)]
    values = [f"v{i:02d}" for i in range(spec.n_values)]
    pairs = []
    for _ in range(n):
        if spec.kind == "copy":
            length = rng.integers(spec.copy_len[0], spec.copy_len[1] + 1)
            toks = [values[i] for i in rng.integers(0, spec.n_values, size=length)]
            text = " ".join(toks)
            pairs.append(Pair(text, text))
            continue
        n_rec = int(rng.integers(spec.n_records[0], spec.n_records[1] + 1))
        n_sal = int(rng.integers(spec.n_salient[0], spec.n_salient[1] + 1))
        sal_at = set(rng.choice(n_rec, size=n_sal, replace=False).tolist())
        rec_keys = rng.choice(spec.n_keys, size=n_rec, replace=False)
        rec_vals = rng.integers(0, spec.n_values, size=n_rec)
        chunks = []
        extracted = []
        for r in range(n_rec):
            body = f"{keys[rec_keys[r]]} {values[rec_vals[r]]}"
            if r in sal_at:
                chunks.append(f"{spec.marker} {body}")
                extracted.append(values[rec_vals[r]])
            else:
                chunks.append(body)
        pairs.append(Pair(" ; ".join(chunks), " ".join(extracted)))
    return pairs
