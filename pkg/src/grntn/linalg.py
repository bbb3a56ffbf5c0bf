"""Dense float64 helpers: bilinear tensor product, activations, shape checks.

Vectors are numpy arrays whose last axis is the feature axis; any leading
axes are treated as a batch. Weights follow the row-vector convention
``y = x @ W`` so a matrix mapping ``i`` features to ``d`` has shape ``(i, d)``.
A 3-D tensor weight is stored slice-major with shape ``(d, i, d)``: slice
``k`` is the ``i x d`` matrix that produces output coordinate ``k``.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not agree."""


def _check(cond: bool, msg: str, *shapes) -> None:
    if not cond:
        raise ShapeError(f"{msg}: " + " vs ".join(str(tuple(s)) for s in shapes))


def as_array(a) -> np.ndarray:
    """float64 view of ``a``; extended-precision arrays are kept as they are
    so a finite-difference oracle can run the same code at higher precision."""
    a = np.asarray(a)
    return a if a.dtype == np.longdouble else a.astype(DTYPE, copy=False)


# ---------------------------------------------------------------------------
# bilinear tensor product
# ---------------------------------------------------------------------------

def bilinear(x, T, h) -> np.ndarray:
    """``out[..., k] = x @ T[k] @ h`` for every slice ``k``.

    ``x`` has shape ``(..., i)``, ``h`` shape ``(..., d)`` and ``T`` shape
    ``(d, i, d)``. Leading axes of ``x`` and ``h`` must match.
    """
    x, T, h = as_array(x), as_array(T), as_array(h)
    _check(T.ndim == 3 and T.shape[0] == T.shape[2], "tensor must be (d, i, d)", T.shape)
    d, i, _ = T.shape
    _check(x.shape[-1:] == (i,), "bilinear input/tensor mismatch", x.shape, T.shape)
    _check(h.shape[-1:] == (d,), "bilinear hidden/tensor mismatch", h.shape, T.shape)
    _check(x.shape[:-1] == h.shape[:-1], "bilinear batch mismatch", x.shape, h.shape)
    outer_xh = (x[..., :, None] * h[..., None, :]).reshape(x.shape[:-1] + (i * d,))
    return outer_xh @ T.reshape(d, i * d).T


def bilinear_grads(x, T, h, g):
    """Gradients of ``sum(g * bilinear(x, T, h))``.

    Returns ``(gx, gT, gh)``. ``gT[k] = sum_batch g[k] * outer(x, h)``;
    batch axes are summed into ``gT`` but kept for ``gx`` and ``gh``.
    """
    x, T, h, g = as_array(x), as_array(T), as_array(h), as_array(g)
    _check(T.ndim == 3 and T.shape[0] == T.shape[2], "tensor must be (d, i, d)", T.shape)
    d, i, _ = T.shape
    _check(x.shape[-1:] == (i,), "bilinear input/tensor mismatch", x.shape, T.shape)
    _check(h.shape[-1:] == (d,), "bilinear hidden/tensor mismatch", h.shape, T.shape)
    _check(g.shape == h.shape, "upstream gradient mismatch", g.shape, h.shape)
    _check(x.shape[:-1] == h.shape[:-1], "bilinear batch mismatch", x.shape, h.shape)
    batch = x.shape[:-1]
    outer_xh = (x[..., :, None] * h[..., None, :]).reshape((-1, i * d))
    gT = (g.reshape(-1, d).T @ outer_xh).reshape(d, i, d)
    # M[b] = sum_k g[b, k] * T[k]
    M = (g.reshape(-1, d) @ T.reshape(d, i * d)).reshape((-1, i, d))
    gx = np.einsum("bij,bj->bi", M, h.reshape(-1, d)).reshape(batch + (i,))
    gh = np.einsum("bij,bi->bj", M, x.reshape(-1, i)).reshape(batch + (d,))
    return gx, gT, gh


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def matvec(x, W) -> np.ndarray:
    """Row-vector product ``x @ W``."""
    x, W = as_array(x), as_array(W)
    _check(W.ndim == 2 and x.shape[-1:] == W.shape[:1], "matvec mismatch", x.shape, W.shape)
    return x @ W


def outer(a, b) -> np.ndarray:
    a, b = as_array(a), as_array(b)
    _check(a.ndim == 1 and b.ndim == 1, "outer expects vectors", a.shape, b.shape)
    return np.outer(a, b)


def add(a, b) -> np.ndarray:
    a, b = as_array(a), as_array(b)
    _check(a.shape == b.shape, "add mismatch", a.shape, b.shape)
    return a + b


def hadamard(a, b) -> np.ndarray:
    a, b = as_array(a), as_array(b)
    _check(a.shape == b.shape, "hadamard mismatch", a.shape, b.shape)
    return a * b


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -as_array(x)))


def tanh(x) -> np.ndarray:
    return np.tanh(as_array(x))


def softmax(x) -> np.ndarray:
    """Softmax over the last axis, shifted by the max so it cannot overflow."""
    x = as_array(x)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x) -> np.ndarray:
    x = as_array(x)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def dsigmoid_from_output(s) -> np.ndarray:
    s = as_array(s)
    return s * (1.0 - s)


def dtanh_from_output(t) -> np.ndarray:
    t = as_array(t)
    return 1.0 - t * t
