"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"GRNTNCK1"
    4 bytes   uint32 manifest length N
    N bytes   manifest, UTF-8 JSON with sorted keys
    rest      float64 little-endian parameters

The manifest records the format version, cell kind, dimensions, the
vocabulary (id order) and the parameter names with shapes. The payload
concatenates the parameters in exactly that order, each in C order:
``W_emb``, the cell parameters (see ``cells.param_shapes``), ``W_hy``, ``b_y``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cells import CellKind
from .data import Vocab
from .model import LanguageModel, count_params, model_shapes

MAGIC = b"GRNTNCK1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: LanguageModel
    vocab: Vocab
    meta: dict = field(default_factory=dict)

    def manifest(self) -> dict:
        m = self.model
        return {
            "format_version": FORMAT_VERSION,
            "cell": m.kind.value,
            "input_size": m.cell.input_size,
            "hidden_size": m.hidden_size,
            "embed_dim": m.embed_dim,
            "vocab_size": m.vocab_size,
            "level": self.vocab.level,
            "vocab_cap": self.vocab.cap,
            "vocab": list(self.vocab.itos),
            "params": [[n, list(p.shape)] for n, p in m.parameters().items()],
            "meta": self.meta,
        }


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.manifest(), sort_keys=True, ensure_ascii=False,
                        separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes()
                       for p in ckpt.model.parameters().values())
    return MAGIC + struct.pack("<I", len(header)) + header + payload


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", blob[8:12])
    man = json.loads(blob[12:12 + n].decode("utf-8"))
    if man.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {man.get('format_version')}")
    kind = CellKind(man["cell"])
    i, d, V, e = man["input_size"], man["hidden_size"], man["vocab_size"], man["embed_dim"]
    shapes = model_shapes(kind, i, d, V, e)
    if [[k, list(s)] for k, s in shapes.items()] != man["params"]:
        raise CheckpointError("parameter listing does not match the cell kind and dimensions")
    payload = np.frombuffer(blob, dtype="<f8", offset=12 + n)
    if payload.size != count_params(kind, i, d, V, e):
        raise CheckpointError(f"payload holds {payload.size} values, expected {count_params(kind, i, d, V, e)}")
    params, off = {}, 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = payload[off:off + size].astype(np.float64).reshape(shape)
        off += size
    vocab = Vocab(tuple(man["vocab"]), man["level"], man["vocab_cap"])
    if len(vocab) != V:
        raise CheckpointError("vocabulary size does not match the embedding")
    return Checkpoint(LanguageModel.from_parameters(kind, params), vocab, man.get("meta", {}))


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
