"""Language model container: embedding table, one recurrent cell, softmax output."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cells import CellKind, CellParams, OutputLayer, param_shapes

EMBEDDING = "W_emb"
OUTPUT_NAMES = ("W_hy", "b_y")


@dataclass
class LanguageModel:
    embedding: np.ndarray  # (V, e)
    cell: CellParams
    output: OutputLayer

    def __post_init__(self):
        V, e = self.embedding.shape
        if self.cell.input_size != e:
            raise ValueError(f"cell input size {self.cell.input_size} != embedding dim {e}")
        if self.output.W_hy.shape != (self.cell.hidden_size, V):
            raise ValueError(f"W_hy shape {self.output.W_hy.shape} != {(self.cell.hidden_size, V)}")

    @property
    def kind(self) -> CellKind:
        return self.cell.kind

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    def parameters(self) -> dict[str, np.ndarray]:
        """Every trainable array by name, in checkpoint order. Values are the
        live arrays, so in-place edits update the model."""
        out = {EMBEDDING: self.embedding}
        out.update((k, self.cell.weights[k]) for k in self.cell.names())
        out["W_hy"] = self.output.W_hy
        out["b_y"] = self.output.b_y
        return out

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}

    def copy(self) -> "LanguageModel":
        return LanguageModel(self.embedding.copy(), self.cell.copy(),
                             OutputLayer(self.output.W_hy.copy(), self.output.b_y.copy()))

    @classmethod
    def zeros(cls, kind, vocab_size: int, embed_dim: int, hidden_size: int) -> "LanguageModel":
        return cls(np.zeros((vocab_size, embed_dim)),
                   CellParams.zeros(kind, embed_dim, hidden_size),
                   OutputLayer.zeros(hidden_size, vocab_size))

    @classmethod
    def from_parameters(cls, kind, params: dict[str, np.ndarray]) -> "LanguageModel":
        emb = params[EMBEDDING]
        V, e = emb.shape
        d = params["W_hy"].shape[0]
        cell = CellParams(kind, e, d, {k: params[k] for k in param_shapes(kind, e, d)})
        return cls(emb, cell, OutputLayer(params["W_hy"], params["b_y"]))


def model_shapes(kind, i: int, d: int, V: int, e: int) -> dict[str, tuple[int, ...]]:
    shapes = {EMBEDDING: (V, e)}
    shapes.update(param_shapes(kind, i, d))
    shapes["W_hy"] = (d, V)
    shapes["b_y"] = (V,)
    return shapes


def count_params(kind, i: int, d: int, V: int, e: int) -> int:
    """Number of free parameters: embedding, cell (incl. any tensor), output layer."""
    kind = CellKind(kind)
    emb = V * e
    out = d * V + V
    if kind is CellKind.RNN:
        cell = i * d + d * d + d
    elif kind.baseline is CellKind.GRU:
        cell = 3 * (i * d + d * d + d)
    else:
        # four input/recurrent blocks plus three full peephole matrices
        cell = 4 * (i * d + d * d + d) + 3 * d * d
    if kind.has_tensor:
        cell += i * d * d
    return emb + cell + out


def matched_hidden_size(kind, target: int, V: int, e: int) -> int:
    """Hidden size whose parameter count is closest to ``target``."""
    lo, hi = 1, 1
    while count_params(kind, e, hi, V, e) < target:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count_params(kind, e, mid, V, e) < target:
            lo = mid
        else:
            hi = mid
    return min((lo, hi), key=lambda d: abs(count_params(kind, e, d, V, e) - target))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Random matrix with orthonormal columns (rows >= cols) or rows (rows < cols)."""
    if rows < 1 or cols < 1:
        raise ValueError("orthogonal_init needs positive dimensions")
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return q if rows >= cols else q.T


def tensor_init(i: int, d: int, rng: np.random.Generator) -> np.ndarray:
    r = 1.0 / math.sqrt(i * d)
    return rng.uniform(-r, r, size=(d, i, d))


def init_model(kind, vocab_size: int, embed_dim: int, hidden_size: int,
               rng: np.random.Generator) -> LanguageModel:
    """Orthogonal matrices, uniform tensor slices, zero biases."""
    shapes = model_shapes(kind, embed_dim, hidden_size, vocab_size, embed_dim)
    params = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        elif len(shape) == 2:
            params[name] = orthogonal_init(*shape, rng)
        else:
            params[name] = tensor_init(embed_dim, hidden_size, rng)
    return LanguageModel.from_parameters(kind, params)
