"""Sequence loss, backpropagation through time, AdaGrad and the epoch loop."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cells import StepState, output_backward, step, step_backward
from .data import Corpus, embed_grad_accumulate, embed_lookup, make_batches, metric_for_level, pad_batch
from .linalg import log_softmax
from .model import EMBEDDING, LanguageModel


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    decay_factor: float = 0.5
    clip_norm: float = 5.0
    bptt_k: int | None = None  # None: full BPTT over each sentence
    dropout: float = 0.0
    batch_size: int = 15
    max_epochs: int = 10
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.bptt_k is not None and self.bptt_k < 1:
            raise ValueError("bptt_k must be >= 1 or None")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.threads < 1:
            raise ValueError("batch_size and threads must be >= 1, max_epochs >= 0")


@dataclass
class LossReport:
    total_nll: float
    token_count: int

    @property
    def mean_nll(self) -> float:
        return self.total_nll / self.token_count


class NumericError(FloatingPointError):
    """Loss or gradient became non-finite."""


# ---------------------------------------------------------------------------
# forward / backward over sequences
# ---------------------------------------------------------------------------

def _as_batch(tokens, mask):
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[:, None]
    if ids.shape[0] < 2:
        raise ValueError("a sequence needs at least two tokens")
    if mask is None:
        mask = np.ones((ids.shape[0] - 1, ids.shape[1]))
    return ids, np.asarray(mask, dtype=np.float64)


def _run_forward(model: LanguageModel, ids, x_masks=None, h_masks=None):
    state = StepState.zeros(model.kind, model.hidden_size, ids.shape[1:])
    traces, outs = [], []
    for t in range(ids.shape[0] - 1):
        x = embed_lookup(model.embedding, ids[t])
        if x_masks is not None:
            x = x * x_masks[t]
        state, tr = step(model.cell, x, state)
        traces.append(tr)
        outs.append(state.h if h_masks is None else state.h * h_masks[t])
    return traces, outs


def sequence_nll(model: LanguageModel, tokens, mask=None) -> LossReport:
    """Sum of -log P(token[t+1] | tokens[:t+1]) in nats.

    ``tokens`` is a 1-D id sequence or a ``(T, B)`` batch with a
    ``(T-1, B)`` mask of real prediction positions.
    """
    ids, mask = _as_batch(tokens, mask)
    if ids.max() >= model.vocab_size or ids.min() < 0:
        raise IndexError(f"token id out of range [0, {model.vocab_size})")
    _, outs = _run_forward(model, ids)
    terms = []
    for t, h in enumerate(outs):
        logp = log_softmax(h @ model.output.W_hy + model.output.b_y)
        picked = np.take_along_axis(logp, ids[t + 1][:, None], axis=-1)[:, 0]
        terms.append(picked * mask[t])
    return LossReport(_neg_sum(terms), int(mask.sum()))


def _neg_sum(terms):
    """Correctly rounded float64 sum (extended-precision inputs keep their dtype)."""
    flat = np.concatenate(terms)
    if flat.dtype == np.longdouble:
        return 0.0 - flat.sum()
    return 0.0 - math.fsum(flat.tolist())


def token_logprobs(model: LanguageModel, tokens) -> np.ndarray:
    """Natural-log probability of every predicted token of one sequence."""
    ids, _ = _as_batch(tokens, None)
    _, outs = _run_forward(model, ids)
    return np.array([
        log_softmax(h @ model.output.W_hy + model.output.b_y)[0, ids[t + 1, 0]]
        for t, h in enumerate(outs)
    ])


def _accumulate(acc: dict, grads: dict) -> None:
    for k, g in grads.items():
        acc[k] += g


def bptt(model: LanguageModel, tokens, k: int | None = None, mask=None,
         x_masks=None, h_masks=None):
    """Analytic gradients of ``sequence_nll`` by backpropagation through time.

    With ``k`` set, the error from prediction ``i`` reaches only steps
    ``max(0, i-k) .. i``. ``x_masks``/``h_masks`` are dropout masks for the
    cell inputs and the hidden-to-output connection, shaped ``(T-1, B, e)``
    and ``(T-1, B, d)``.

    Returns ``(grads, LossReport)``; gradients are sums, not means.
    """
    ids, mask = _as_batch(tokens, mask)
    if ids.max() >= model.vocab_size or ids.min() < 0:
        raise IndexError(f"token id out of range [0, {model.vocab_size})")
    traces, outs = _run_forward(model, ids, x_masks, h_masks)
    grads = model.zeros_like()
    cell_names = model.cell.names()
    T1 = len(traces)
    total = 0.0
    dh_out = []
    for t in range(T1):
        g_out, dh, nll = output_backward(model.output, outs[t], ids[t + 1], mask[t])
        _accumulate(grads, g_out)
        total += nll
        dh_out.append(dh if h_masks is None else dh * h_masks[t])

    def back_through(t, ds):
        g_cell, dx, ds = step_backward(model.cell, traces[t], ds)
        for name in cell_names:
            grads[name] += g_cell[name]
        if x_masks is not None:
            dx = dx * x_masks[t]
        embed_grad_accumulate(grads[EMBEDDING], ids[t], dx)
        return ds

    zero = np.zeros_like(dh_out[0])
    lstm = model.kind.has_cell_state
    if k is None:
        ds = StepState(zero, zero.copy() if lstm else None)
        for t in reversed(range(T1)):
            ds = back_through(t, StepState(ds.h + dh_out[t], ds.c))
    else:
        for i in range(T1):
            ds = StepState(dh_out[i], zero.copy() if lstm else None)
            for t in range(i, max(0, i - k) - 1, -1):
                ds = back_through(t, ds)
    return grads, LossReport(total, int(mask.sum()))


# ---------------------------------------------------------------------------
# optimizer pieces
# ---------------------------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_rescale(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by ``clip_norm / norm`` when the global L2 norm exceeds ``clip_norm``."""
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    scale = clip_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class OptimizerState:
    accum: dict[str, np.ndarray]
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], eps: float = 1e-8) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, eps)


def adagrad_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptimizerState, lr: float) -> dict[str, np.ndarray]:
    """In-place AdaGrad step on every array in ``params``."""
    for k, p in params.items():
        g = grads[k]
        acc = state.accum[k]
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + state.eps)
    return params


def maybe_decay_lr(current_lr: float, prev_val_cost: float | None, val_cost: float, factor: float) -> float:
    if prev_val_cost is not None and val_cost > prev_val_cost:
        return current_lr * factor
    return current_lr


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask with entries in {0, 1/(1-p)}."""
    if not 0 <= p < 1:
        raise ValueError("dropout probability must be in [0, 1)")
    if p == 0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


# ---------------------------------------------------------------------------
# batches and epochs
# ---------------------------------------------------------------------------

def batch_gradients(model: LanguageModel, sentences: Sequence[np.ndarray], k: int | None = None,
                    dropout: float = 0.0, rng: np.random.Generator | None = None, threads: int = 1):
    """Summed gradients and loss over a batch of sentences.

    Sentences are padded into one ``(T, B)`` array. With ``threads > 1`` the
    batch is split into contiguous chunks that run concurrently; chunk
    results are summed in a fixed order. Dropout masks are drawn once for
    the whole batch so they do not depend on ``threads``.
    """
    ids, mask = pad_batch(sentences, pad_id=0)
    T1, B = mask.shape
    x_masks = h_masks = None
    if dropout > 0:
        x_masks = dropout_mask((T1, B, model.embed_dim), dropout, rng)
        h_masks = dropout_mask((T1, B, model.hidden_size), dropout, rng)

    def run(cols):
        sub_mask = mask[:, cols]
        T = int(sub_mask.sum(axis=1).nonzero()[0].max()) + 2
        xm = None if x_masks is None else x_masks[:T - 1, cols]
        hm = None if h_masks is None else h_masks[:T - 1, cols]
        return bptt(model, ids[:T, cols], k, sub_mask[:T - 1], xm, hm)

    chunks = [c for c in np.array_split(np.arange(B), min(threads, B)) if len(c)]
    if len(chunks) == 1:
        results = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(run, chunks))
    grads, report = results[0]
    total, count = report.total_nll, report.token_count
    for g, r in results[1:]:
        _accumulate(grads, g)
        total += r.total_nll
        count += r.token_count
    return grads, LossReport(total, count)


def evaluate_corpus(model: LanguageModel, corpus: Corpus, batch_size: int = 64) -> LossReport:
    """Total NLL over a corpus, dropout off, deterministic order."""
    totals, count = [], 0
    for idx in make_batches(len(corpus.sentences), batch_size, None):
        ids, mask = pad_batch([corpus.sentences[j] for j in idx])
        r = sequence_nll(model, ids, mask)
        totals.append(r.total_nll)
        count += r.token_count
    return LossReport(math.fsum(totals), count)


@dataclass
class EpochRecord:
    epoch: int
    train_nll: float  # mean nats per predicted token
    val_metric: float
    lr: float
    seconds: float
    val_nll: float = field(default=float("nan"), repr=False)


def train_model(model: LanguageModel, train: Corpus, valid: Corpus | None, cfg: TrainConfig,
                on_epoch: Callable[[EpochRecord, LanguageModel], None] | None = None,
                rng: np.random.Generator | None = None) -> list[EpochRecord]:
    """AdaGrad training over shuffled sentence batches.

    Each batch gradient is the summed gradient divided by the number of
    predicted tokens, then rescaled to ``cfg.clip_norm``. After every epoch
    the validation NLL drives the learning-rate decay.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = OptimizerState.for_params(params)
    lr = cfg.learning_rate
    prev_val = None
    history = []
    eval_set = valid if valid is not None else train
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for idx in make_batches(len(train.sentences), cfg.batch_size, rng):
            grads, rep = batch_gradients(model, [train.sentences[j] for j in idx], cfg.bptt_k,
                                         cfg.dropout, rng, cfg.threads)
            if not math.isfinite(rep.total_nll):
                raise NumericError(f"non-finite training loss in epoch {epoch}")
            grads = {n: g / rep.token_count for n, g in grads.items()}
            grads = clip_rescale(grads, cfg.clip_norm)
            adagrad_update(params, grads, opt, lr)
            total += rep.total_nll
            count += rep.token_count
        val = evaluate_corpus(model, eval_set)
        if not math.isfinite(val.total_nll):
            raise NumericError(f"non-finite validation loss in epoch {epoch}")
        rec = EpochRecord(epoch, float(total / count),
                          float(metric_for_level(eval_set.level, val.total_nll, val.token_count)),
                          lr, time.perf_counter() - t0, float(val.mean_nll))
        lr = maybe_decay_lr(lr, prev_val, val.mean_nll, cfg.decay_factor)
        prev_val = val.mean_nll
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec, model)
    return history
