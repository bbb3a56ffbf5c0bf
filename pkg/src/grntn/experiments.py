"""Desk-scale experiments shared by ``scripts/`` and the acceptance tests."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Corpus, bits_per_character, build_vocab
from .model import count_params, init_model, matched_hidden_size
from .training import EpochRecord, TrainConfig, evaluate_corpus, train_model

DATA_DIR = Path(__file__).resolve().parents[2] / "data"
TEMPEST = DATA_DIR / "tempest.txt"

# (label, kind, hidden, embed, vocab, reported budget)
REFERENCE_BUDGETS = [
    ("word GRURNTN", "grurntn", 256, 128, 10_000, 12e6),
    ("word GRURNN", "gru", 860, 128, 10_000, 12e6),
    ("word LSTMRNTN", "lstmrntn", 256, 128, 10_000, 13e6),
    ("word LSTMRNN", "lstm", 740, 128, 10_000, 13e6),
    ("char GRURNTN", "grurntn", 256, 32, 50, 2.2e6),
    ("char GRURNN", "gru", 820, 32, 50, 2.2e6),
    ("char LSTMRNTN", "lstmrntn", 256, 32, 50, 2.6e6),
    ("char LSTMRNN", "lstm", 600, 32, 50, 2.6e6),
]


def budget_table():
    """(label, count, reported, relative deviation) for every reported configuration."""
    rows = []
    for label, kind, d, e, V, reported in REFERENCE_BUDGETS:
        n = count_params(kind, e, d, V, e)
        rows.append((label, n, reported, (n - reported) / reported))
    return rows


# ---------------------------------------------------------------------------
# memorization
# ---------------------------------------------------------------------------

def memorization_run(kind: str = "grurntn", hidden: int = 16, embed: int = 8, epochs: int = 50,
                     repeats: int = 64, pattern: str = "abcdefgh", seed: int = 0,
                     lr: float = 0.1, return_model: bool = False):
    """Train on ``repeats`` lines of ``pattern``; returns (final train BPC, history, seconds),
    with the trained model appended when ``return_model`` is set."""
    t0 = time.perf_counter()
    text = (pattern + "\n") * repeats
    vocab = build_vocab(text, "char")
    corpus = Corpus.from_text(text, vocab)
    rng = np.random.default_rng(seed)
    model = init_model(kind, len(vocab), embed, hidden, rng)
    hist = train_model(model, corpus, None, TrainConfig(learning_rate=lr, max_epochs=epochs, seed=seed))
    rep = evaluate_corpus(model, corpus)
    out = (bits_per_character(rep.total_nll, rep.token_count), hist, time.perf_counter() - t0)
    return out + (model,) if return_model else out


# ---------------------------------------------------------------------------
# parameter-matched trend check
# ---------------------------------------------------------------------------

def split_lines(text: str, valid_fraction: float = 0.1) -> tuple[str, str]:
    """Non-empty lines; the last ``valid_fraction`` of them form the validation text."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    cut = int(round(len(lines) * (1 - valid_fraction)))
    return "\n".join(lines[:cut]), "\n".join(lines[cut:])


@dataclass
class TrendSettings:
    embed: int = 16
    tensor_hidden: int = 48
    epochs: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    lr: float = 0.1
    dropout: float = 0.0
    batch_size: int = 15
    valid_fraction: float = 0.1


@dataclass
class TrendResult:
    settings: TrendSettings
    hidden: dict[str, int]
    params: dict[str, int]
    curves: dict[str, list[list[float]]] = field(default_factory=dict)  # kind -> per seed val BPC per epoch
    seconds: float = 0.0

    def median_final(self, kind: str) -> float:
        return statistics.median(c[-1] for c in self.curves[kind])


def trend_pairs(settings: TrendSettings, vocab_size: int) -> dict[str, int]:
    """Hidden sizes: the tensor models at ``tensor_hidden``, each baseline
    sized to match its tensor counterpart's parameter count."""
    e, d = settings.embed, settings.tensor_hidden
    return {
        "grurntn": d,
        "gru": matched_hidden_size("gru", count_params("grurntn", e, d, vocab_size, e), vocab_size, e),
        "lstmrntn": d,
        "lstm": matched_hidden_size("lstm", count_params("lstmrntn", e, d, vocab_size, e), vocab_size, e),
    }


def trend_run(text: str | None = None, settings: TrendSettings | None = None, kinds=None,
              echo=None) -> TrendResult:
    """Char-level validation BPC curves for parameter-matched tensor/baseline pairs."""
    settings = settings or TrendSettings()
    if text is None:
        text = TEMPEST.read_text(encoding="utf-8")
    t0 = time.perf_counter()
    train_text, valid_text = split_lines(text, settings.valid_fraction)
    vocab = build_vocab(train_text, "char")
    train_c, valid_c = Corpus.from_text(train_text, vocab), Corpus.from_text(valid_text, vocab)
    V, e = len(vocab), settings.embed
    hidden = trend_pairs(settings, V)
    kinds = kinds or list(hidden)
    result = TrendResult(settings, {k: hidden[k] for k in kinds},
                         {k: count_params(k, e, hidden[k], V, e) for k in kinds})
    for kind in kinds:
        result.curves[kind] = []
        for seed in settings.seeds:
            ss = np.random.SeedSequence([seed, 2016])
            init_rng, train_rng = (np.random.default_rng(s) for s in ss.spawn(2))
            model = init_model(kind, V, e, hidden[kind], init_rng)
            cfg = TrainConfig(learning_rate=settings.lr, max_epochs=settings.epochs, seed=seed,
                              dropout=settings.dropout, batch_size=settings.batch_size)
            hist = train_model(model, train_c, valid_c, cfg, rng=train_rng)
            curve = [h.val_metric for h in hist]
            result.curves[kind].append(curve)
            if echo is not None:
                echo(f"{kind:<9} d={hidden[kind]:<4} seed={seed} val BPC " + " ".join(f"{v:.3f}" for v in curve))
    result.seconds = time.perf_counter() - t0
    return result
