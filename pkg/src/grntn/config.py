"""Run configuration: a flat JSON object whose keys mirror the CLI flags.

Example::

    {
      "cell": "grurntn", "task": "char", "embed": 32, "hidden": 256,
      "lr": 0.1, "decay": 0.5, "clip": 5.0, "bptt_k": null, "dropout": 0.25,
      "batch": 15, "epochs": 10, "seed": 0, "threads": 1, "vocab_cap": null,
      "train": "data/train.txt", "valid": "data/valid.txt", "test": null,
      "checkpoint": "runs/model.ckpt", "metrics": "runs/metrics.csv"
    }

Every key is optional; defaults are the ``RunConfig`` field defaults.
``bptt_k`` of null or 0 means full BPTT. ``vocab_cap`` only applies to
word-level runs (char runs keep every observed character).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .cells import CellKind
from .data import LEVELS, PTB_VOCAB_CAP
from .training import TrainConfig


@dataclass
class RunConfig:
    cell: str = "grurntn"
    task: str = "char"
    embed: int = 32
    hidden: int = 64
    lr: float = 0.1
    decay: float = 0.5
    clip: float = 5.0
    bptt_k: int | None = None
    dropout: float = 0.0
    batch: int = 15
    epochs: int = 10
    seed: int = 0
    threads: int = 1
    vocab_cap: int | None = PTB_VOCAB_CAP
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.csv"

    def __post_init__(self):
        CellKind(self.cell)
        if self.task not in LEVELS:
            raise ValueError(f"task must be one of {LEVELS}")
        if self.embed < 1 or self.hidden < 1:
            raise ValueError("embed and hidden must be positive")
        self.train_config()  # validates the optimizer fields

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.lr, decay_factor=self.decay, clip_norm=self.clip,
                           bptt_k=self.bptt_k or None, dropout=self.dropout, batch_size=self.batch,
                           max_epochs=self.epochs, seed=self.seed, threads=self.threads)

    @property
    def effective_vocab_cap(self) -> int | None:
        return self.vocab_cap if self.task == "word" else None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        values = json.loads(Path(path).read_text()) if path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(values)
