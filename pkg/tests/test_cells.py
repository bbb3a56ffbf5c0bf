import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from grntn.cells import (
    CellKind, CellParams, OutputLayer, StepState, output_backward, output_forward, param_shapes, step,
    step_backward, step_grurntn, step_gru, step_lstm, step_lstmrntn, step_simple,
)
from grntn.linalg import ShapeError, log_softmax

KINDS = list(CellKind)


def random_params(kind, i, d, rng, scale=0.5):
    shapes = param_shapes(kind, i, d)
    return CellParams(kind, i, d, {k: rng.normal(0, scale, size=s) for k, s in shapes.items()})


def random_state(kind, d, rng, batch=()):
    shape = tuple(batch) + (d,)
    h = rng.normal(0, 0.5, size=shape)
    c = rng.normal(0, 0.5, size=shape) if CellKind(kind).has_cell_state else None
    return StepState(h, c)


def baseline_of(params):
    w = {k: v for k, v in params.weights.items() if k != "W_tsr"}
    return CellParams(params.kind.baseline, params.input_size, params.hidden_size, w)


class TestSimple:
    def test_zero_params(self, rng):
        p = CellParams.zeros("rnn", 3, 4)
        s, _ = step_simple(p, rng.normal(size=3), StepState(rng.normal(size=4)))
        assert not s.h.any()

    def test_identity_input(self):
        p = CellParams.zeros("rnn", 3, 3)
        p["W_xh"][...] = np.eye(3)
        x = np.array([0.01, -0.02, 0.03])
        s, _ = step_simple(p, x, StepState(np.zeros(3)))
        np.testing.assert_array_equal(s.h, np.tanh(x))

    def test_scalar_oracle(self, rng):
        p = random_params("rnn", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("rnn", 7, rng)
        s, _ = step_simple(p, x, st_)
        ref = oracles.step_simple(oracles.as_lists(p.weights), x.tolist(), st_.h.tolist())
        np.testing.assert_allclose(s.h, ref, rtol=1e-12, atol=1e-14)


class TestGRU:
    def test_zero_params(self, rng):
        p = CellParams.zeros("gru", 3, 4)
        h_prev = rng.normal(size=4)
        s, tr = step_gru(p, rng.normal(size=3), StepState(h_prev))
        assert np.all(tr.cache["r"] == 0.5) and np.all(tr.cache["z"] == 0.5)
        assert not tr.cache["h_cand"].any()
        np.testing.assert_array_equal(s.h, 0.5 * h_prev)

    def test_zero_history(self, rng):
        p = random_params("gru", 3, 4, rng)
        for b in ("b_r", "b_z", "b_h"):
            p[b][...] = 0
        x = rng.normal(size=3)
        s, tr = step_gru(p, x, StepState(np.zeros(4)))
        np.testing.assert_allclose(tr.cache["z"], 1 / (1 + np.exp(-(x @ p["W_xz"]))), rtol=1e-15)
        z = tr.cache["z"]
        np.testing.assert_allclose(s.h, z * np.tanh(x @ p["W_xh"]), rtol=1e-15)
        # with zero input weights into z the update gate sits at one half
        p["W_xz"][...] = 0
        s, _ = step_gru(p, x, StepState(np.zeros(4)))
        np.testing.assert_allclose(s.h, 0.5 * np.tanh(x @ p["W_xh"]), rtol=1e-15)

    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params("gru", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("gru", 7, rng)
        s, _ = step_gru(p, x, st_)
        ref = oracles.step_gru(oracles.as_lists(p.weights), x.tolist(), st_.h.tolist())
        np.testing.assert_allclose(s.h, ref, rtol=1e-12, atol=1e-14)


class TestGRURNTN:
    def test_zero_tensor_matches_gru(self, rng):
        p = random_params("grurntn", 5, 7, rng)
        p["W_tsr"][...] = 0
        x, st_ = rng.normal(size=5), random_state("gru", 7, rng)
        assert np.array_equal(step_grurntn(p, x, st_)[0].h, step_gru(baseline_of(p), x, st_)[0].h)

    def test_zero_params(self, rng):
        h_prev = rng.normal(size=4)
        s, _ = step_grurntn(CellParams.zeros("grurntn", 3, 4), rng.normal(size=3), StepState(h_prev))
        np.testing.assert_array_equal(s.h, 0.5 * h_prev)

    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params("grurntn", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("grurntn", 7, rng)
        s, _ = step_grurntn(p, x, st_)
        P = oracles.as_lists(p.weights)
        ref = oracles.step_gru(P, x.tolist(), st_.h.tolist(), tensor=P["W_tsr"])
        np.testing.assert_allclose(s.h, ref, rtol=1e-12, atol=1e-14)

    def test_tensor_changes_output(self, rng):
        p = random_params("grurntn", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("grurntn", 7, rng)
        assert not np.array_equal(step_grurntn(p, x, st_)[0].h, step_gru(baseline_of(p), x, st_)[0].h)


class TestLSTM:
    def test_zero_params(self, rng):
        p = CellParams.zeros("lstm", 3, 4)
        s, tr = step_lstm(p, rng.normal(size=3), StepState(rng.normal(size=4), np.zeros(4)))
        for g in ("i", "f", "o"):
            assert np.all(tr.cache[g] == 0.5)
        assert not s.c.any() and not s.h.any()

    def test_memory_retention(self, rng):
        p = random_params("lstm", 3, 4, rng)
        p["b_f"][...] = 50.0
        p["b_i"][...] = -50.0
        c_prev = rng.normal(size=4)
        s, _ = step_lstm(p, rng.normal(size=3), StepState(rng.normal(size=4), c_prev))
        np.testing.assert_allclose(s.c, c_prev, rtol=1e-12, atol=1e-12)

    def test_output_gate_reads_updated_cell(self, rng):
        p = CellParams.zeros("lstm", 2, 3)
        p["W_co"][...] = np.eye(3) * 4.0
        p["b_i"][...] = 50.0
        p["W_xc"][...] = rng.normal(size=(2, 3))
        x = rng.normal(size=2)
        s, tr = step_lstm(p, x, StepState(np.zeros(3), np.zeros(3)))
        # c_prev is zero, so a peephole reading c_prev would leave o at exactly one half
        np.testing.assert_allclose(tr.cache["o"], 1 / (1 + np.exp(-4.0 * s.c)), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params("lstm", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("lstm", 7, rng)
        s, _ = step_lstm(p, x, st_)
        h, c = oracles.step_lstm(oracles.as_lists(p.weights), x.tolist(), st_.h.tolist(), st_.c.tolist())
        np.testing.assert_allclose(s.h, h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.c, c, rtol=1e-12, atol=1e-14)


class TestLSTMRNTN:
    def test_zero_tensor_matches_lstm(self, rng):
        p = random_params("lstmrntn", 5, 7, rng)
        p["W_tsr"][...] = 0
        x, st_ = rng.normal(size=5), random_state("lstm", 7, rng)
        a, b = step_lstmrntn(p, x, st_)[0], step_lstm(baseline_of(p), x, st_)[0]
        assert np.array_equal(a.h, b.h) and np.array_equal(a.c, b.c)

    def test_zero_params(self, rng):
        s, _ = step_lstmrntn(CellParams.zeros("lstmrntn", 3, 4), rng.normal(size=3),
                             StepState(rng.normal(size=4), np.zeros(4)))
        assert not s.h.any()

    @pytest.mark.parametrize("seed", range(3))
    def test_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params("lstmrntn", 5, 7, rng)
        x, st_ = rng.normal(size=5), random_state("lstmrntn", 7, rng)
        s, _ = step_lstmrntn(p, x, st_)
        P = oracles.as_lists(p.weights)
        h, c = oracles.step_lstm(P, x.tolist(), st_.h.tolist(), st_.c.tolist(), tensor=P["W_tsr"])
        np.testing.assert_allclose(s.h, h, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(s.c, c, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("kind", ["grurntn", "lstmrntn"])
def test_reduction_over_long_sequence(kind, rng):
    p = random_params(kind, 4, 6, rng)
    p["W_tsr"][...] = 0
    base = baseline_of(p)
    s1 = s2 = random_state(kind, 6, rng)
    for _ in range(100):
        x = rng.normal(size=4)
        s1, _ = step(p, x, s1)
        s2, _ = step(base, x, s2)
        assert np.array_equal(s1.h, s2.h)
        if s1.c is not None:
            assert np.array_equal(s1.c, s2.c)


@given(st.sampled_from(KINDS), st.integers(0, 2**31))
def test_gate_ranges_and_interpolation(kind, seed):
    rng = np.random.default_rng(seed)
    p = random_params(kind, 4, 5, rng, scale=1.0)
    s, tr = step(p, rng.normal(size=4), random_state(kind, 5, rng))
    for name in ("r", "z", "i", "f", "o"):
        if name in tr.cache:
            assert ((tr.cache[name] > 0) & (tr.cache[name] < 1)).all()
    for name in ("h_cand", "c_cand", "tanh_c"):
        if name in tr.cache:
            assert (np.abs(tr.cache[name]) < 1).all()
    if "h_cand" in tr.cache:
        lo = np.minimum(tr.prev.h, tr.cache["h_cand"])
        hi = np.maximum(tr.prev.h, tr.cache["h_cand"])
        assert ((s.h >= lo) & (s.h <= hi)).all()


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind, rng):
    p = random_params(kind, 3, 4, rng)
    x, st_ = rng.normal(size=3), random_state(kind, 4, rng)
    a, b = step(p, x, st_)[0], step(p, x, st_)[0]
    assert a.h.tobytes() == b.h.tobytes()


@pytest.mark.parametrize("kind", KINDS)
def test_shape_errors(kind):
    p = CellParams.zeros(kind, 3, 4)
    with pytest.raises(ShapeError):
        step(p, np.ones(2), StepState.zeros(kind, 4))
    with pytest.raises(ShapeError):
        step(p, np.ones(3), StepState.zeros(kind, 5))


def test_params_reject_wrong_shapes():
    with pytest.raises(ShapeError):
        CellParams("gru", 3, 4, {k: np.zeros(s) for k, s in param_shapes("grurntn", 3, 4).items()})
    shapes = param_shapes("grurntn", 3, 4)
    assert shapes["W_tsr"] == (4, 3, 4)
    bad = {k: np.zeros(s) for k, s in shapes.items()}
    bad["W_tsr"] = np.zeros((4, 4, 3))
    with pytest.raises(ShapeError):
        CellParams("grurntn", 3, 4, bad)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def _step_loss(params, x, prev, wh, wc):
    s, _ = step(params, x, prev)
    out = (s.h * wh).sum()
    if s.c is not None:
        out = out + (s.c * wc).sum()
    return out


def _numeric(fn, arr, eps=1e-5):
    g = np.zeros(arr.shape)
    for j in np.ndindex(arr.shape):
        orig = arr[j]
        arr[j] = orig + eps
        up = fn()
        arr[j] = orig - eps
        down = fn()
        arr[j] = orig
        g[j] = float((up - down) / (2 * eps))
    return g


def _assert_close(analytic, numeric, name, tol=1e-6, floor=1e-10):
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    assert rel.max() < tol, f"{name}: {rel.max():.2e}"


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(2))
def test_step_backward_finite_differences(kind, seed):
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    i, d = 5, 7
    p = random_params(kind, i, d, rng)
    x, prev = rng.normal(size=i), random_state(kind, d, rng)
    wh, wc = rng.normal(size=d), rng.normal(size=d)
    _, tr = step(p, x, prev)
    grads, dx, dprev = step_backward(p, tr, StepState(wh, wc if p.kind.has_cell_state else None))

    # the differencing runs in extended precision so roundoff stays far below the tolerance
    P = CellParams(kind, i, d, {k: v.astype(np.longdouble) for k, v in p.weights.items()})
    X = x.astype(np.longdouble)
    H = prev.h.astype(np.longdouble)
    C = None if prev.c is None else prev.c.astype(np.longdouble)
    loss = lambda: _step_loss(P, X, StepState(H, C), wh, wc)  # noqa: E731
    for name in p.names():
        _assert_close(grads[name], _numeric(loss, P[name]), name)
    _assert_close(dx, _numeric(loss, X), "x")
    _assert_close(dprev.h, _numeric(loss, H), "h_prev")
    if C is not None:
        _assert_close(dprev.c, _numeric(loss, C), "c_prev")


@pytest.mark.parametrize("kind", KINDS)
def test_zero_upstream_gives_zero_gradients(kind, rng):
    p = random_params(kind, 3, 4, rng)
    _, tr = step(p, rng.normal(size=3), random_state(kind, 4, rng))
    grads, dx, dprev = step_backward(p, tr, StepState.zeros(kind, 4))
    assert all(not g.any() for g in grads.values())
    assert not dx.any() and not dprev.h.any()


def test_grurntn_scalar_tensor_gradient():
    p = CellParams("grurntn", 1, 1, {k: np.full(s, w) for (k, s), w in zip(
        param_shapes("grurntn", 1, 1).items(), [0.3, -0.2, 0.1, 0.4, 0.5, -0.1, 0.7, 0.6, 0.05, 0.9])})
    x, h_prev, g = np.array([0.8]), np.array([-0.6]), 1.3
    _, tr = step_grurntn(p, x, StepState(h_prev))
    grads, _, _ = step_backward(p, tr, StepState(np.array([g])))

    r = 1 / (1 + np.exp(-(0.8 * 0.3 + -0.6 * -0.2 + 0.1)))
    z = 1 / (1 + np.exp(-(0.8 * 0.4 + -0.6 * 0.5 - 0.1)))
    rh = r * -0.6
    a = 0.8 * 0.7 + rh * 0.6 + 0.05 + 0.8 * 0.9 * rh
    # dh/dcand = z, then through tanh
    expected = g * z * (1 - np.tanh(a) ** 2) * 0.8 * rh
    assert grads["W_tsr"][0, 0, 0] == pytest.approx(expected, rel=1e-13)


def test_step_backward_kind_mismatch(rng):
    p = random_params("gru", 3, 4, rng)
    _, tr = step(random_params("lstm", 3, 4, rng), rng.normal(size=3), random_state("lstm", 4, rng))
    with pytest.raises(ValueError):
        step_backward(p, tr, StepState.zeros("gru", 4))


# ---------------------------------------------------------------------------
# output layer
# ---------------------------------------------------------------------------

class TestOutputLayer:
    def test_zero_layer_is_uniform(self, rng):
        layer = OutputLayer.zeros(4, 9)
        h = rng.normal(size=4)
        np.testing.assert_allclose(output_forward(layer, h), np.full(9, 1 / 9), rtol=1e-15)
        _, _, nll = output_backward(layer, h, 3)
        assert nll == pytest.approx(np.log(9), rel=1e-15)

    def test_confident_prediction(self):
        layer = OutputLayer(np.zeros((2, 2)), np.array([20.0, -20.0]))
        p = output_forward(layer, np.zeros(2))
        assert p[0] == pytest.approx(1.0, abs=1e-15) and p[1] < 1e-17
        _, _, nll = output_backward(layer, np.zeros(2), 0)
        assert nll < 1e-16

    def test_finite_differences(self, rng):
        layer = OutputLayer(rng.normal(size=(5, 6)), rng.normal(size=6))
        h = rng.normal(size=5)
        grads, gh, _ = output_backward(layer, h, 2)
        L = OutputLayer(layer.W_hy.astype(np.longdouble), layer.b_y.astype(np.longdouble))
        H = h.astype(np.longdouble)
        # nll comes back as a Python float, so difference the log-softmax directly
        loss = lambda: -log_softmax(H @ L.W_hy + L.b_y)[2]  # noqa: E731
        _assert_close(grads["W_hy"], _numeric(loss, L.W_hy), "W_hy")
        _assert_close(grads["b_y"], _numeric(loss, L.b_y), "b_y")
        _assert_close(gh, _numeric(loss, H), "h")

    def test_gradient_is_p_minus_onehot(self, rng):
        layer = OutputLayer(rng.normal(size=(3, 4)), rng.normal(size=4))
        h = rng.normal(size=3)
        grads, _, _ = output_backward(layer, h, 1)
        p = output_forward(layer, h)
        np.testing.assert_allclose(grads["b_y"], p - np.eye(4)[1], rtol=1e-13, atol=1e-16)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            output_backward(OutputLayer.zeros(2, 3), np.zeros(2), 3)
