"""Command-line entry points: train, eval, gradcheck, params, sample.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .cells import CellKind, StepState, output_logits, step
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .data import EOS, Corpus, build_vocab, metric_for_level
from .gradcheck import run_suite
from .linalg import softmax
from .model import count_params, init_model
from .training import EpochRecord, LossReport, NumericError, evaluate_corpus, token_logprobs, train_model

log = logging.getLogger("grntn")

METRICS_HEADER = ("epoch", "train_nll", "val_metric", "lr", "seconds")
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


# ---------------------------------------------------------------------------
# library-level operations
# ---------------------------------------------------------------------------

def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read corpus {path}: {exc.strerror}") from exc


def best_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".best")


def train(cfg: RunConfig) -> tuple[Checkpoint, list[EpochRecord]]:
    """Full training run: builds the vocabulary from the training text,
    writes the initial checkpoint, then one metrics row and one checkpoint
    per epoch (plus a ``.best`` copy at the lowest validation metric)."""
    if cfg.train is None:
        raise ValueError("a training corpus is required")
    text = _read(cfg.train)
    vocab = build_vocab(text, cfg.task, cfg.effective_vocab_cap)
    train_corpus = Corpus.from_text(text, vocab)
    valid_corpus = Corpus.from_text(_read(cfg.valid), vocab) if cfg.valid else None
    init_rng, train_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    model = init_model(cfg.cell, len(vocab), cfg.embed, cfg.hidden, init_rng)
    log.info("%s %s: V=%d e=%d d=%d params=%d", cfg.cell, cfg.task, len(vocab), cfg.embed, cfg.hidden,
             count_params(cfg.cell, cfg.embed, cfg.hidden, len(vocab), cfg.embed))

    ck = Checkpoint(model, vocab, {"epoch": 0})
    Path(cfg.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.metrics).parent.mkdir(parents=True, exist_ok=True)
    ckpt_io.save(ck, cfg.checkpoint)
    best = [math.inf]

    with open(cfg.metrics, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        fh.flush()

        def on_epoch(rec: EpochRecord, m):
            writer.writerow([rec.epoch, repr(rec.train_nll), repr(rec.val_metric), repr(rec.lr),
                             f"{rec.seconds:.3f}"])
            fh.flush()
            ck.meta = {"epoch": rec.epoch}
            ckpt_io.save(ck, cfg.checkpoint)
            if rec.val_metric < best[0]:
                best[0] = rec.val_metric
                ckpt_io.save(ck, best_path(cfg.checkpoint))
            log.info("epoch %d train_nll=%.4f val=%.4f lr=%g (%.1fs)", rec.epoch, rec.train_nll,
                     rec.val_metric, rec.lr, rec.seconds)

        history = train_model(model, train_corpus, valid_corpus, cfg.train_config(), on_epoch, train_rng)
    return ck, history


def evaluate(ck: Checkpoint, corpus: Corpus) -> tuple[float, LossReport]:
    """PPL (word) or BPC (char) of ``corpus`` under the checkpoint, dropout off."""
    rep = evaluate_corpus(ck.model, corpus)
    return metric_for_level(ck.vocab.level, rep.total_nll, rep.token_count), rep


def dump_logprobs(ck: Checkpoint, corpus: Corpus, path) -> None:
    """One TSV row per predicted token: sentence, position, token, natural-log probability."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("sentence\tposition\ttoken\tlogprob\n")
        for s, ids in enumerate(corpus.sentences):
            for t, lp in enumerate(token_logprobs(ck.model, ids)):
                tok = ck.vocab.itos[int(ids[t + 1])]
                fh.write(f"{s}\t{t + 1}\t{tok!r}\t{float(lp)!r}\n")


def sample(ck: Checkpoint, length: int, temperature: float = 1.0, seed: int = 0) -> str:
    """Autoregressive sampling starting from a sentence boundary.

    ``temperature <= 0`` decodes greedily. Sentence ends are rendered as
    newlines and reset the state, as every training sentence starts from a
    zero state. Word-level tokens are space separated.
    """
    model, vocab = ck.model, ck.vocab
    rng = np.random.default_rng(seed)
    state = StepState.zeros(model.kind, model.hidden_size)
    tok = vocab.eos_id
    out: list[str] = []
    for _ in range(length):
        state, _ = step(model.cell, model.embedding[tok], state)
        logits = output_logits(model.output, state.h)
        if temperature <= 0:
            tok = int(np.argmax(logits))
        else:
            p = softmax(logits / temperature)
            tok = int(rng.choice(len(p), p=p))
        out.append(vocab.itos[tok])
        if tok == vocab.eos_id:
            state = StepState.zeros(model.kind, model.hidden_size)
    if vocab.level == "char":
        return "".join("\n" if t == EOS else t for t in out)
    text = " ".join("\n" if t == EOS else t for t in out)
    return text.replace(" \n ", "\n").replace(" \n", "\n").replace("\n ", "\n")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bptt(value: str) -> int:
    if value.lower() in ("none", "inf", "full"):
        return 0
    k = int(value)
    if k < 0:
        raise argparse.ArgumentTypeError("K must be >= 0 (0 means full BPTT)")
    return k


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="grntn", description="Tensor-augmented gated recurrent language models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def model_flags(sp):
        sp.add_argument("--cell", choices=[k.value for k in CellKind])
        sp.add_argument("--task", choices=["word", "char"])
        sp.add_argument("--hidden", type=int)
        sp.add_argument("--embed", type=int)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON run configuration; flags override it")
    model_flags(t)
    t.add_argument("--lr", type=float)
    t.add_argument("--decay", type=float)
    t.add_argument("--clip", type=float)
    t.add_argument("--bptt-k", type=_bptt, dest="bptt_k", help="truncation window; 0 or 'none' = full")
    t.add_argument("--dropout", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--vocab-cap", type=int, dest="vocab_cap")
    t.add_argument("--train", help="training text, one sentence per line")
    t.add_argument("--valid")
    t.add_argument("--test")
    t.add_argument("--checkpoint")
    t.add_argument("--metrics")

    e = sub.add_parser("eval", help="PPL (word) or BPC (char) of a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--task", choices=["word", "char"], help="fail unless the checkpoint has this level")
    e.add_argument("--dump-logprobs", dest="dump", help="write per-token log-probabilities (TSV)")

    g = sub.add_parser("gradcheck", help="finite-difference certification of all gradients")
    g.add_argument("--cell", action="append", choices=[k.value for k in CellKind],
                   help="repeatable; default all kinds")
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--input", type=int, default=5)
    g.add_argument("--hidden", type=int, default=7)
    g.add_argument("--vocab", type=int, default=11)
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-5)

    c = sub.add_parser("params", help="count free parameters")
    c.add_argument("--cell", required=True, choices=[k.value for k in CellKind])
    c.add_argument("--hidden", type=int, required=True)
    c.add_argument("--embed", type=int, required=True)
    c.add_argument("--vocab", type=int, required=True)

    s = sub.add_parser("sample", help="generate text from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--length", type=int, default=200)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    return p


_TRAIN_KEYS = ("cell", "task", "hidden", "embed", "lr", "decay", "clip", "bptt_k", "dropout", "batch",
               "epochs", "seed", "threads", "vocab_cap", "train", "valid", "test", "checkpoint", "metrics")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return _dispatch(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, CheckpointError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args) -> int:
    if args.command == "train":
        cfg = RunConfig.load(args.config, {k: getattr(args, k) for k in _TRAIN_KEYS})
        _, history = train(cfg)
        for rec in history:
            print(f"epoch {rec.epoch}: train_nll={rec.train_nll:.4f} val={rec.val_metric:.4f} lr={rec.lr:g}")
        if cfg.test:
            ck = ckpt_io.load(best_path(cfg.checkpoint) if history else cfg.checkpoint)
            metric, _ = evaluate(ck, Corpus.from_text(_read(cfg.test), ck.vocab))
            print(f"test {'ppl' if cfg.task == 'word' else 'bpc'}: {metric:.4f}")
        return EXIT_OK

    if args.command == "eval":
        ck = ckpt_io.load(args.checkpoint)
        if args.task and args.task != ck.vocab.level:
            raise ValueError(f"vocab mismatch: checkpoint is {ck.vocab.level}-level, asked for {args.task}")
        corpus = Corpus.from_text(_read(args.corpus), ck.vocab)
        metric, rep = evaluate(ck, corpus)
        if not math.isfinite(metric):
            raise NumericError("non-finite evaluation metric")
        if args.dump:
            dump_logprobs(ck, corpus, args.dump)
        name = "ppl" if ck.vocab.level == "word" else "bpc"
        print(f"{name} {metric!r} nll {float(rep.total_nll)!r} tokens {rep.token_count}")
        return EXIT_OK

    if args.command == "gradcheck":
        ok = run_suite(kinds=args.cell or tuple(CellKind), seeds=range(args.seeds), input_size=args.input,
                       hidden_size=args.hidden, vocab_size=args.vocab, eps=args.eps, rel_tol=args.tol)
        print("all gradients pass" if ok else "gradient check FAILED")
        return EXIT_OK if ok else EXIT_NUMERIC

    if args.command == "params":
        print(count_params(args.cell, args.embed, args.hidden, args.vocab, args.embed))
        return EXIT_OK

    if args.command == "sample":
        ck = ckpt_io.load(args.checkpoint)
        sys.stdout.write(sample(ck, args.length, args.temperature, args.seed))
        sys.stdout.write("\n")
        return EXIT_OK
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
