"""Single-timestep forward/backward for the recurrent cells and the softmax output layer.

All step functions accept a batch: ``x`` is ``(..., i)`` and the state
vectors are ``(..., d)``. Parameter gradients are summed over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .linalg import (
    ShapeError,
    as_array,
    bilinear,
    bilinear_grads,
    dsigmoid_from_output,
    dtanh_from_output,
    log_softmax,
    sigmoid,
    softmax,
)


class CellKind(str, Enum):
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"
    GRURNTN = "grurntn"
    LSTMRNTN = "lstmrntn"

    @property
    def has_cell_state(self) -> bool:
        return self in (CellKind.LSTM, CellKind.LSTMRNTN)

    @property
    def has_tensor(self) -> bool:
        return self in (CellKind.GRURNTN, CellKind.LSTMRNTN)

    @property
    def baseline(self) -> "CellKind":
        return {CellKind.GRURNTN: CellKind.GRU, CellKind.LSTMRNTN: CellKind.LSTM}.get(self, self)


def param_shapes(kind, i: int, d: int) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes for a cell. The order is the
    serialization order used by checkpoints."""
    kind = CellKind(kind)
    if kind is CellKind.RNN:
        shapes = {"W_xh": (i, d), "W_hh": (d, d), "b_h": (d,)}
    elif kind.baseline is CellKind.GRU:
        shapes = {
            "W_xr": (i, d), "W_hr": (d, d), "b_r": (d,),
            "W_xz": (i, d), "W_hz": (d, d), "b_z": (d,),
            "W_xh": (i, d), "W_hh": (d, d), "b_h": (d,),
        }
    else:
        shapes = {
            "W_xi": (i, d), "W_hi": (d, d), "W_ci": (d, d), "b_i": (d,),
            "W_xf": (i, d), "W_hf": (d, d), "W_cf": (d, d), "b_f": (d,),
            "W_xc": (i, d), "W_hc": (d, d), "b_c": (d,),
            "W_xo": (i, d), "W_ho": (d, d), "W_co": (d, d), "b_o": (d,),
        }
    if kind.has_tensor:
        shapes["W_tsr"] = (d, i, d)
    return shapes


@dataclass
class CellParams:
    kind: CellKind
    input_size: int
    hidden_size: int
    weights: dict[str, np.ndarray]

    def __post_init__(self):
        self.kind = CellKind(self.kind)
        expected = param_shapes(self.kind, self.input_size, self.hidden_size)
        if set(self.weights) != set(expected):
            raise ShapeError(
                f"{self.kind.value} expects parameters {sorted(expected)}, got {sorted(self.weights)}"
            )
        for name, shape in expected.items():
            w = self.weights[name] = as_array(self.weights[name])
            if w.shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {w.shape}")

    @classmethod
    def zeros(cls, kind, input_size: int, hidden_size: int) -> "CellParams":
        shapes = param_shapes(kind, input_size, hidden_size)
        return cls(kind, input_size, hidden_size, {k: np.zeros(s) for k, s in shapes.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]

    def names(self) -> list[str]:
        return list(param_shapes(self.kind, self.input_size, self.hidden_size))

    def copy(self) -> "CellParams":
        return CellParams(self.kind, self.input_size, self.hidden_size,
                          {k: v.copy() for k, v in self.weights.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.weights.items()}


@dataclass
class StepState:
    h: np.ndarray
    c: np.ndarray | None = None

    @classmethod
    def zeros(cls, kind, hidden_size: int, batch: tuple[int, ...] = ()) -> "StepState":
        kind = CellKind(kind)
        shape = tuple(batch) + (hidden_size,)
        return cls(np.zeros(shape), np.zeros(shape) if kind.has_cell_state else None)


@dataclass
class StepTrace:
    """Everything the backward pass needs from one forward step."""

    kind: CellKind
    x: np.ndarray
    prev: StepState
    cache: dict[str, np.ndarray] = field(default_factory=dict)


def _check_inputs(params: CellParams, x, prev: StepState):
    x = as_array(x)
    if x.shape[-1] != params.input_size:
        raise ShapeError(f"input has {x.shape[-1]} features, cell expects {params.input_size}")
    h = as_array(prev.h)
    if h.shape[-1] != params.hidden_size or h.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"state shape {h.shape} does not fit input {x.shape}, d={params.hidden_size}")
    if params.kind.has_cell_state:
        if prev.c is None or as_array(prev.c).shape != h.shape:
            raise ShapeError(f"{params.kind.value} needs a cell state shaped like {h.shape}")
    return x, h


# ---------------------------------------------------------------------------
# forward steps
# ---------------------------------------------------------------------------

def step_simple(params: CellParams, x, prev: StepState):
    x, h_prev = _check_inputs(params, x, prev)
    h = np.tanh(x @ params["W_xh"] + h_prev @ params["W_hh"] + params["b_h"])
    return StepState(h), StepTrace(params.kind, x, StepState(h_prev), {"h": h})


def _gru(params: CellParams, x, prev: StepState, tensor: np.ndarray | None):
    x, h_prev = _check_inputs(params, x, prev)
    r = sigmoid(x @ params["W_xr"] + h_prev @ params["W_hr"] + params["b_r"])
    z = sigmoid(x @ params["W_xz"] + h_prev @ params["W_hz"] + params["b_z"])
    rh = r * h_prev
    a = x @ params["W_xh"] + rh @ params["W_hh"] + params["b_h"]
    if tensor is not None:
        a = a + bilinear(x, tensor, rh)
    h_cand = np.tanh(a)
    h = (1.0 - z) * h_prev + z * h_cand
    cache = {"r": r, "z": z, "rh": rh, "a": a, "h_cand": h_cand, "h": h}
    return StepState(h), StepTrace(params.kind, x, StepState(h_prev), cache)


def step_gru(params: CellParams, x, prev: StepState):
    return _gru(params, x, prev, None)


def step_grurntn(params: CellParams, x, prev: StepState):
    return _gru(params, x, prev, params["W_tsr"])


def _lstm(params: CellParams, x, prev: StepState, tensor: np.ndarray | None):
    x, h_prev = _check_inputs(params, x, prev)
    c_prev = as_array(prev.c)
    i = sigmoid(x @ params["W_xi"] + h_prev @ params["W_hi"] + c_prev @ params["W_ci"] + params["b_i"])
    f = sigmoid(x @ params["W_xf"] + h_prev @ params["W_hf"] + c_prev @ params["W_cf"] + params["b_f"])
    a = x @ params["W_xc"] + h_prev @ params["W_hc"] + params["b_c"]
    if tensor is not None:
        a = a + bilinear(x, tensor, h_prev)
    c_cand = np.tanh(a)
    c = f * c_prev + i * c_cand
    # output gate peeks at the updated cell
    o = sigmoid(x @ params["W_xo"] + h_prev @ params["W_ho"] + c @ params["W_co"] + params["b_o"])
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = {"i": i, "f": f, "o": o, "a": a, "c_cand": c_cand, "c": c, "tanh_c": tanh_c, "h": h}
    return StepState(h, c), StepTrace(params.kind, x, StepState(h_prev, c_prev), cache)


def step_lstm(params: CellParams, x, prev: StepState):
    return _lstm(params, x, prev, None)


def step_lstmrntn(params: CellParams, x, prev: StepState):
    return _lstm(params, x, prev, params["W_tsr"])


_FORWARD = {
    CellKind.RNN: step_simple,
    CellKind.GRU: step_gru,
    CellKind.GRURNTN: step_grurntn,
    CellKind.LSTM: step_lstm,
    CellKind.LSTMRNTN: step_lstmrntn,
}


def step(params: CellParams, x, prev: StepState):
    """Dispatch to the forward step for ``params.kind``."""
    return _FORWARD[params.kind](params, x, prev)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _wgrad(inp: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return _flat(inp).T @ _flat(delta)


def _bgrad(delta: np.ndarray) -> np.ndarray:
    return _flat(delta).sum(axis=0)


def _backward_simple(p, tr, dh):
    da = dh * dtanh_from_output(tr.cache["h"])
    grads = {
        "W_xh": _wgrad(tr.x, da),
        "W_hh": _wgrad(tr.prev.h, da),
        "b_h": _bgrad(da),
    }
    return grads, da @ p["W_xh"].T, StepState(da @ p["W_hh"].T)


def _backward_gru(p, tr, dh):
    c = tr.cache
    x, h_prev = tr.x, tr.prev.h
    r, z, rh = c["r"], c["z"], c["rh"]
    dh_prev = dh * (1.0 - z)
    dz = dh * (c["h_cand"] - h_prev)
    da = dh * z * dtanh_from_output(c["h_cand"])
    grads = {
        "W_xh": _wgrad(x, da),
        "W_hh": _wgrad(rh, da),
        "b_h": _bgrad(da),
    }
    dx = da @ p["W_xh"].T
    drh = da @ p["W_hh"].T
    if p.kind.has_tensor:
        gx, gT, grh = bilinear_grads(x, p["W_tsr"], rh, da)
        grads["W_tsr"] = gT
        dx = dx + gx
        drh = drh + grh
    dh_prev = dh_prev + drh * r
    da_r = drh * h_prev * dsigmoid_from_output(r)
    da_z = dz * dsigmoid_from_output(z)
    grads.update({
        "W_xr": _wgrad(x, da_r), "W_hr": _wgrad(h_prev, da_r), "b_r": _bgrad(da_r),
        "W_xz": _wgrad(x, da_z), "W_hz": _wgrad(h_prev, da_z), "b_z": _bgrad(da_z),
    })
    dx = dx + da_r @ p["W_xr"].T + da_z @ p["W_xz"].T
    dh_prev = dh_prev + da_r @ p["W_hr"].T + da_z @ p["W_hz"].T
    return grads, dx, StepState(dh_prev)


def _backward_lstm(p, tr, dh, dc_in):
    c = tr.cache
    x, h_prev, c_prev = tr.x, tr.prev.h, tr.prev.c
    i, f, o, c_cand, tanh_c = c["i"], c["f"], c["o"], c["c_cand"], c["tanh_c"]
    da_o = dh * tanh_c * dsigmoid_from_output(o)
    dc = dc_in + dh * o * dtanh_from_output(tanh_c) + da_o @ p["W_co"].T
    da_f = dc * c_prev * dsigmoid_from_output(f)
    da_i = dc * c_cand * dsigmoid_from_output(i)
    da_c = dc * i * dtanh_from_output(c_cand)
    grads = {
        "W_xi": _wgrad(x, da_i), "W_hi": _wgrad(h_prev, da_i), "W_ci": _wgrad(c_prev, da_i), "b_i": _bgrad(da_i),
        "W_xf": _wgrad(x, da_f), "W_hf": _wgrad(h_prev, da_f), "W_cf": _wgrad(c_prev, da_f), "b_f": _bgrad(da_f),
        "W_xc": _wgrad(x, da_c), "W_hc": _wgrad(h_prev, da_c), "b_c": _bgrad(da_c),
        "W_xo": _wgrad(x, da_o), "W_ho": _wgrad(h_prev, da_o), "W_co": _wgrad(c["c"], da_o), "b_o": _bgrad(da_o),
    }
    dx = da_i @ p["W_xi"].T + da_f @ p["W_xf"].T + da_c @ p["W_xc"].T + da_o @ p["W_xo"].T
    dh_prev = da_i @ p["W_hi"].T + da_f @ p["W_hf"].T + da_c @ p["W_hc"].T + da_o @ p["W_ho"].T
    dc_prev = dc * f + da_i @ p["W_ci"].T + da_f @ p["W_cf"].T
    if p.kind.has_tensor:
        gx, gT, gh = bilinear_grads(x, p["W_tsr"], h_prev, da_c)
        grads["W_tsr"] = gT
        dx = dx + gx
        dh_prev = dh_prev + gh
    return grads, dx, StepState(dh_prev, dc_prev)


def step_backward(params: CellParams, trace: StepTrace, grad_state: StepState):
    """Backpropagate ``grad_state`` (dL/dh, and dL/dc for LSTM cells) through one step.

    Returns ``(grads, grad_x, grad_prev)`` where ``grads`` maps every parameter
    name to its gradient summed over the batch.
    """
    if trace.kind is not params.kind:
        raise ValueError(f"trace from a {trace.kind.value} step cannot be used with {params.kind.value} params")
    dh = as_array(grad_state.h)
    if dh.shape != trace.prev.h.shape:
        raise ShapeError(f"grad h shape {dh.shape} vs state {trace.prev.h.shape}")
    kind = params.kind
    if kind is CellKind.RNN:
        return _backward_simple(params, trace, dh)
    if kind.baseline is CellKind.GRU:
        return _backward_gru(params, trace, dh)
    dc = np.zeros_like(dh) if grad_state.c is None else as_array(grad_state.c)
    return _backward_lstm(params, trace, dh, dc)


# ---------------------------------------------------------------------------
# output layer
# ---------------------------------------------------------------------------

@dataclass
class OutputLayer:
    W_hy: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        self.W_hy = as_array(self.W_hy)
        self.b_y = as_array(self.b_y)
        if self.W_hy.ndim != 2 or self.b_y.shape != self.W_hy.shape[1:]:
            raise ShapeError(f"output layer shapes {self.W_hy.shape} / {self.b_y.shape}")

    @classmethod
    def zeros(cls, hidden_size: int, vocab_size: int) -> "OutputLayer":
        return cls(np.zeros((hidden_size, vocab_size)), np.zeros(vocab_size))

    @property
    def vocab_size(self) -> int:
        return self.b_y.shape[0]


def output_logits(layer: OutputLayer, h) -> np.ndarray:
    h = as_array(h)
    if h.shape[-1] != layer.W_hy.shape[0]:
        raise ShapeError(f"hidden {h.shape} vs W_hy {layer.W_hy.shape}")
    return h @ layer.W_hy + layer.b_y


def output_forward(layer: OutputLayer, h) -> np.ndarray:
    return softmax(output_logits(layer, h))


def output_backward(layer: OutputLayer, h, target, weight=None):
    """Softmax + negative log-likelihood at ``target``.

    ``h`` is ``(..., d)`` and ``target`` an int array of the matching batch
    shape. ``weight`` (same shape as ``target``) masks or scales rows.
    Returns ``(grads, grad_h, nll)`` with ``nll`` summed over the batch.
    """
    h = as_array(h)
    target = np.asarray(target, dtype=np.int64)
    V = layer.vocab_size
    if target.shape != h.shape[:-1]:
        raise ShapeError(f"target shape {target.shape} vs hidden {h.shape}")
    if target.size and (target.min() < 0 or target.max() >= V):
        raise IndexError(f"target index out of range [0, {V})")
    logp = log_softmax(output_logits(layer, h))
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, target[..., None],
                      np.take_along_axis(dlogits, target[..., None], axis=-1) - 1.0, axis=-1)
    if weight is not None:
        weight = as_array(weight)
        dlogits = dlogits * weight[..., None]
        nll = -float((picked * weight).sum())
    else:
        nll = -float(picked.sum())
    grads = {"W_hy": _wgrad(h, dlogits), "b_y": _bgrad(dlogits)}
    return grads, dlogits @ layer.W_hy.T, nll
