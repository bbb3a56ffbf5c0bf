"""Tokenization, vocabulary, corpora, batching, embeddings and LM metrics."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EOS = "</s>"
UNK = "<unk>"
SPECIALS = (EOS, UNK)
LEVELS = ("word", "char")
PTB_VOCAB_CAP = 10_000


def tokenize(line: str, level: str) -> list[str]:
    """Split one line into tokens and append the end-of-sentence marker.

    Word level splits on whitespace; char level keeps every character,
    spaces included.
    """
    line = line.rstrip("\n")
    if level == "word":
        toks = line.split()
    elif level == "char":
        toks = list(line)
    else:
        raise ValueError(f"unknown level {level!r}")
    return toks + [EOS]


def detokenize(tokens: Iterable[str], level: str) -> str:
    toks = [t for t in tokens if t != EOS]
    return ("" if level == "char" else " ").join(toks)


def _lines(text) -> list[str]:
    if isinstance(text, str):
        return text.splitlines()
    return [line.rstrip("\n") for line in text]


@dataclass(frozen=True)
class Vocab:
    itos: tuple[str, ...]
    level: str
    cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "_stoi", {t: k for k, t in enumerate(self.itos)})
        if len(self._stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        for s in SPECIALS:
            if s not in self._stoi:
                raise ValueError(f"vocabulary lacks {s}")

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def unk_id(self) -> int:
        return self._stoi[UNK]

    @property
    def eos_id(self) -> int:
        return self._stoi[EOS]

    def lookup(self, token: str) -> int:
        return self._stoi.get(token, self._stoi[UNK])

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(k)] for k in ids]


def build_vocab(text, level: str, cap: int | None = None) -> Vocab:
    """Keep the ``cap`` most frequent tokens (ties broken lexicographically)
    plus ``</s>`` and ``<unk>``. ``cap=None`` keeps everything."""
    lines = _lines(text)
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(t for t in tokenize(line, level) if t not in SPECIALS)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if cap is not None:
        ranked = ranked[:cap]
    return Vocab(SPECIALS + tuple(t for t, _ in ranked), level, cap)


def encode_line(line: str, vocab: Vocab) -> np.ndarray:
    """Token ids for one sentence, prefixed with ``</s>`` as the start context."""
    return np.array([vocab.eos_id] + vocab.encode(tokenize(line, vocab.level)), dtype=np.int64)


@dataclass
class Corpus:
    sentences: list[np.ndarray]
    vocab: Vocab

    @property
    def level(self) -> str:
        return self.vocab.level

    @property
    def n_predictions(self) -> int:
        return sum(len(s) - 1 for s in self.sentences)

    @property
    def n_tokens(self) -> int:
        """Tokens in the text proper, sentence markers excluded."""
        return sum(len(s) - 2 for s in self.sentences)

    @classmethod
    def from_text(cls, text, vocab: Vocab) -> "Corpus":
        sents = [encode_line(line, vocab) for line in _lines(text) if line.strip()]
        return cls(sents, vocab)

    @classmethod
    def from_file(cls, path, vocab: Vocab) -> "Corpus":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), vocab)


def make_batches(n_sentences: int, batch_size: int, rng: np.random.Generator | None) -> list[np.ndarray]:
    """Shuffle sentence indices (if ``rng`` is given) and cut them into batches.

    The final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n_sentences) if rng is not None else np.arange(n_sentences)
    return [order[k:k + batch_size] for k in range(0, n_sentences, batch_size)]


def pad_batch(sentences: Sequence[np.ndarray], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length id sequences as ``(T, B)``; returns ids and a
    ``(T-1, B)`` float mask marking real prediction positions."""
    T = max(len(s) for s in sentences)
    ids = np.full((T, len(sentences)), pad_id, dtype=np.int64)
    mask = np.zeros((T - 1, len(sentences)))
    for b, s in enumerate(sentences):
        ids[:len(s), b] = s
        mask[:len(s) - 1, b] = 1.0
    return ids, mask


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def perplexity(total_nll_nats: float, token_count: int) -> float:
    if token_count < 1:
        raise ValueError("token_count must be >= 1")
    mean = total_nll_nats / token_count
    return math.exp(mean) if mean < 709.0 else math.inf


def bits_per_character(total_nll_nats: float, char_count: int) -> float:
    if char_count < 1:
        raise ValueError("char_count must be >= 1")
    return total_nll_nats / (char_count * math.log(2))


def metric_for_level(level: str, total_nll_nats: float, count: int) -> float:
    """PPL for word-level corpora, BPC for char-level."""
    if level == "word":
        return perplexity(total_nll_nats, count)
    return bits_per_character(total_nll_nats, count)


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def embed_lookup(table: np.ndarray, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    return table[ids]


def embed_grad_accumulate(grad_table: np.ndarray, ids, g) -> None:
    """Add ``g`` into the rows ``ids`` of ``grad_table`` (repeats accumulate)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= grad_table.shape[0]):
        raise IndexError(f"token id out of range [0, {grad_table.shape[0]})")
    g = np.asarray(g, dtype=np.float64)
    np.add.at(grad_table, ids.reshape(-1), g.reshape(-1, grad_table.shape[1]))
