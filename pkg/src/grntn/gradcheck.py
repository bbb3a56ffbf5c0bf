"""Central finite-difference oracle for certifying analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cells import CellKind
from .linalg import ShapeError
from .model import LanguageModel


@dataclass
class CheckReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    worst_index: tuple[int, ...]
    passed: bool

    def row(self) -> str:
        flag = "ok" if self.passed else "FAIL"
        return f"{self.name:<10} rel={self.max_rel_error:9.2e} abs={self.max_abs_error:9.2e} at {self.worst_index}  {flag}"


def finite_diff(loss_fn: Callable[[], float], params: dict[str, np.ndarray], eps: float = 1e-5,
                names=None) -> dict[str, np.ndarray]:
    """Central differences ``(L(p+eps) - L(p-eps)) / 2eps`` for every coordinate.

    ``loss_fn`` takes no arguments and must read the arrays in ``params``,
    which are perturbed in place and restored afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = {}
    for name in names if names is not None else params:
        p = params[name]
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_fn()
            flat[j] = orig - eps
            down = loss_fn()
            flat[j] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}{np.unravel_index(j, p.shape)}")
            gflat[j] = (up - down) / (2 * eps)
        out[name] = g
    return out


def compare(analytic, numeric, rel_tol: float = 1e-5, abs_floor: float = 1e-10, name: str = "") -> CheckReport:
    """Per-coordinate ``|a - n| / max(|a|, |n|, abs_floor)``; reports the worst one.

    A coordinate passes when its relative error is below ``rel_tol`` or when
    both values are below ``abs_floor``.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ShapeError(f"analytic {a.shape} vs numeric {n.shape}")
    if a.size == 0:
        return CheckReport(name, 0.0, 0.0, (), True)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = diff / np.maximum(scale, abs_floor)
    ok = (rel < rel_tol) | (scale < abs_floor)
    worst = int(np.argmax(rel))
    max_rel = float(rel.reshape(-1)[worst])
    return CheckReport(name, max_rel, float(diff.max()),
                       tuple(int(v) for v in np.unravel_index(worst, a.shape)), bool(ok.all()))


def random_model(kind, vocab_size: int, embed_dim: int, hidden_size: int,
                 rng: np.random.Generator, scale: float = 0.5) -> LanguageModel:
    """Model with every parameter drawn from N(0, scale^2), biases included."""
    m = LanguageModel.zeros(kind, vocab_size, embed_dim, hidden_size)
    for p in m.parameters().values():
        p[...] = rng.normal(0.0, scale, size=p.shape)
    return m


def check_model(model: LanguageModel, tokens, k: int | None = None, eps: float = 1e-5,
                rel_tol: float = 1e-5, abs_floor: float = 1e-10) -> list[CheckReport]:
    """BPTT gradients of one sequence against finite differences of its NLL.

    The loss seen by the differencing runs on an extended-precision copy
    of the model: in float64 the roundoff in ``L(p+eps) - L(p-eps)`` is
    about 1e-10 at ``eps=1e-5``, which swamps coordinates whose gradient
    is below 1e-5. With ``k`` set the oracle differentiates
    :func:`truncated_loss_fn` instead.
    """
    from .training import bptt, sequence_nll

    grads, _ = bptt(model, tokens, k)
    oracle = extended_copy(model)
    params = oracle.parameters()
    if k is None:
        loss = lambda: sequence_nll(oracle, tokens).total_nll  # noqa: E731
    else:
        loss = truncated_loss_fn(oracle, tokens, k)
    numeric = finite_diff(loss, params, eps)
    return [compare(grads[n], numeric[n], rel_tol, abs_floor, n) for n in params]


def extended_copy(model: LanguageModel) -> LanguageModel:
    params = {n: p.astype(np.longdouble) for n, p in model.parameters().items()}
    return LanguageModel.from_parameters(model.kind, params)


def truncated_loss_fn(model: LanguageModel, tokens, k: int) -> Callable[[], float]:
    """Loss whose exact gradient is the ``k``-truncated BPTT gradient.

    For each prediction ``i`` the state entering step ``max(0, i-k)`` is
    taken from a forward pass with the parameters as they are *now*; the
    returned closure then replays only the window with the live
    (possibly perturbed) parameters and sums ``-log P(token[i+1])``.
    """
    from .cells import StepState, step
    from .linalg import log_softmax

    ids = np.asarray(tokens, dtype=np.int64)
    ref = model.copy()
    frozen = [StepState.zeros(model.kind, model.hidden_size)]
    for t in range(len(ids) - 1):
        frozen.append(step(ref.cell, ref.embedding[ids[t]], frozen[-1])[0])

    def loss():
        total = 0
        for i in range(len(ids) - 1):
            start = max(0, i - k)
            s = frozen[start]
            for t in range(start, i + 1):
                s, _ = step(model.cell, model.embedding[ids[t]], s)
            logp = log_softmax(s.h @ model.output.W_hy + model.output.b_y)
            total = total - logp[ids[i + 1]]
        return total

    return loss


def run_suite(kinds=tuple(CellKind), seeds=range(5), input_size: int = 5, hidden_size: int = 7,
              vocab_size: int = 11, steps=(4, 6), eps: float = 1e-5, rel_tol: float = 1e-5,
              abs_floor: float = 1e-10, echo: Callable[[str], None] | None = print) -> bool:
    """Randomized gradient certification over cell kinds and seeds; True if all pass."""
    ok = True
    for kind in kinds:
        kind = CellKind(kind)
        for seed in seeds:
            rng = np.random.default_rng([seed, list(CellKind).index(kind)])
            model = random_model(kind, vocab_size, input_size, hidden_size, rng)
            T = int(rng.integers(steps[0], steps[1] + 1))
            tokens = rng.integers(0, vocab_size, size=T + 1)
            reports = check_model(model, tokens, None, eps, rel_tol, abs_floor)
            passed = all(r.passed for r in reports)
            ok &= passed
            if echo is not None:
                worst = max(reports, key=lambda r: r.max_rel_error)
                echo(f"{kind.value:<9} seed={seed} T={T}  worst {worst.row()}")
                for r in reports:
                    if not r.passed:
                        echo("    " + r.row())
    return ok
