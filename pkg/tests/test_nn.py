import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradient_cases import cases
from nimzero.nn.checkpoint import ArchDescriptor, CheckpointError, read_checkpoint, write_checkpoint
from nimzero.nn.core import (
    DegenerateBatch,
    MissingCache,
    NonFiniteError,
    Param,
    ShapeMismatch,
    bce_with_logits,
    cross_entropy_loss,
    log_softmax,
    mse_loss,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from nimzero.nn.gradcheck import gradient_check
from nimzero.nn.layers import LSTM, BatchNorm1d, Linear, LSTMStack
from nimzero.nn.optim import Adam, AdamState, adam_step


@pytest.mark.parametrize("case", cases(11, seed=1), ids=lambda c: c.name)
def test_gradients(case):
    assert gradient_check(case.loss_and_backward, case.loss_only, case.params) <= 1e-4


def test_gradcheck_catches_a_wrong_gradient():
    p = Param(np.array([1.0, 2.0]))

    def both():
        p.grad[...] = 3 * p.value  # true gradient is 2 * value
        return float(np.sum(p.value**2))

    assert gradient_check(both, lambda: float(np.sum(p.value**2)), [p]) > 0.1


def test_lstm_init():
    rng = np.random.default_rng(0)
    layer = LSTM(3, 16, rng)
    H = 16
    assert layer.w_x.shape == (3, 4 * H) and layer.w_h.shape == (H, 4 * H)
    assert np.abs(layer.w_x.value).max() <= 1 / np.sqrt(3)
    assert np.abs(layer.w_h.value).max() <= 1 / np.sqrt(H)
    assert np.all(layer.bias.value[H : 2 * H] == 1.0)
    assert np.all(np.delete(layer.bias.value, np.s_[H : 2 * H]) == 0.0)


def test_lstm_matches_scalar_reference():
    rng = np.random.default_rng(4)
    layer = LSTM(2, 3, rng)
    x = rng.normal(size=(4, 1, 2))
    hs = layer.forward(x)
    h = np.zeros(3)
    c = np.zeros(3)
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    for t in range(4):
        z = x[t, 0] @ layer.w_x.value + h @ layer.w_h.value + layer.bias.value
        i, f, g, o = sig(z[:3]), sig(z[3:6]), np.tanh(z[6:9]), sig(z[9:])
        c = f * c + i * g
        h = o * np.tanh(c)
        assert np.allclose(hs[t, 0], h)


def test_float32_stays_float32():
    stack = LSTMStack(1, 8, 2, np.random.default_rng(0), np.float32)
    out = stack.forward(np.ones((3, 2, 1)), train=True)
    assert out.dtype == np.float32
    assert stack.backward(np.ones_like(out)).dtype == np.float32


def test_backward_without_forward():
    with pytest.raises(MissingCache):
        LSTM(1, 2).backward(np.zeros((1, 1, 2)))
    with pytest.raises(MissingCache):
        Linear(1, 2).backward(np.zeros((1, 2)))
    with pytest.raises(MissingCache):
        BatchNorm1d(2).backward(np.zeros((3, 2)))
    layer = LSTM(1, 2)
    layer.forward(np.zeros((2, 1, 1)))  # inference: nothing cached
    with pytest.raises(MissingCache):
        layer.backward(np.zeros((2, 1, 2)))


def test_layer_count_bounds():
    with pytest.raises(ValueError):
        LSTMStack(1, 4, 0)
    with pytest.raises(ValueError):
        LSTMStack(1, 4, 11)


def test_batchnorm_statistics():
    bn = BatchNorm1d(2, momentum=0.5)
    x = np.array([[1.0, 0.0], [3.0, 4.0]])
    y = bn.forward(x)
    assert np.allclose(y.mean(axis=0), 0)
    assert np.allclose(bn.running_mean, 0.5 * x.mean(axis=0))
    assert np.allclose(bn.running_var, 0.5 + 0.5 * x.var(axis=0, ddof=1))
    bn.eval()
    assert np.allclose(bn.forward(x), (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps))
    bn.train()
    with pytest.raises(DegenerateBatch):
        bn.forward(x[:1])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_softmax_properties(values):
    z = np.array([values])
    p = softmax(z)
    assert np.isclose(p.sum(), 1.0)
    assert np.allclose(np.exp(log_softmax(z)), p)
    assert np.allclose(softmax(z + 7.0), p)


def test_loss_values():
    loss, _ = cross_entropy_loss(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 1.0]))
    assert np.isclose(loss, -np.log(1e-12))
    loss, g = mse_loss(np.array([0.5, -1.0]), np.array([1.0, -1.0]))
    assert np.isclose(loss, 0.125) and np.allclose(g, [-0.5, 0.0])
    loss, g = softmax_cross_entropy(np.zeros((1, 4)), np.array([[0.0, 1.0, 0.0, 0.0]]))
    assert np.isclose(loss, np.log(4))
    assert np.allclose(g, [[0.25, -0.75, 0.25, 0.25]])
    loss, _ = bce_with_logits(np.array([1000.0, -1000.0]), np.array([1, 0]))
    assert loss == 0.0
    loss, _ = bce_with_logits(np.array([0.0]), np.array([1]))
    assert np.isclose(loss, np.log(2))
    assert np.allclose(sigmoid(np.array([-1e4, 0.0, 1e4])), [0.0, 0.5, 1.0])


def _reference_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(25, 3))
    p = np.array([0.3, -1.0, 2.0])
    state = AdamState.for_params([p.copy()], lr=0.01)
    value = [p.copy()]
    for g in grads:
        adam_step(state, value, [g])
    expected = [_reference_adam(p[i], grads[:, i], lr=0.01) for i in range(3)]
    assert np.allclose(value[0], expected, rtol=1e-12)


def test_adam_first_step_is_lr_times_sign():
    p = Param(np.array([1.0, 1.0]))
    opt = Adam([("p", p)], lr=0.1)
    p.grad[...] = [3.0, -0.002]
    opt.step()
    assert np.allclose(p.value, [0.9, 1.1], atol=1e-6)


def test_adam_minimises_quadratic():
    p = Param(np.array([5.0, -3.0]))
    opt = Adam([("p", p)], lr=0.1)
    for _ in range(2000):
        opt.zero_grad()
        p.grad += 2 * (p.value - np.array([1.0, 2.0]))
        opt.step()
    assert np.allclose(p.value, [1.0, 2.0], atol=1e-3)


def test_adam_clipping_and_errors():
    p = Param(np.zeros(2))
    opt = Adam([("p", p)], lr=1.0, max_grad_norm=1.0)
    p.grad[...] = [300.0, 400.0]
    opt.step()
    assert np.allclose(opt.state.m[0], 0.1 * np.array([0.6, 0.8]))
    p.grad[...] = [np.nan, 0.0]
    with pytest.raises(NonFiniteError):
        opt.step()
    state = AdamState.for_params([np.zeros(2)])
    with pytest.raises(ShapeMismatch):
        adam_step(state, [np.zeros(2)], [np.zeros(3)])
    with pytest.raises(NonFiniteError):
        adam_step(AdamState.for_params([np.zeros(1)], lr=np.inf), [np.zeros(1)], [np.ones(1)])


def test_adam_state_round_trip():
    p = Param(np.ones(3))
    opt = Adam([("p", p)])
    p.grad[...] = 1.0
    opt.step()
    saved = {k: np.copy(v) for k, v in opt.state_arrays().items()}
    other = Adam([("p", Param(np.ones(3)))])
    other.load_state_arrays(saved)
    assert other.state.t == 1
    assert np.array_equal(other.state.m[0], opt.state.m[0])


def test_checkpoint_round_trip(tmp_path):
    desc = ArchDescriptor((1, 3, 5), 1, 8, 2, 9, 1)
    flat = np.random.default_rng(0).normal(size=123).astype(np.float32)
    path = tmp_path / "net.nimz"
    write_checkpoint(path, desc, flat)
    got_desc, got = read_checkpoint(path)
    assert got_desc == desc
    assert np.array_equal(got, flat)


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "net.nimz"
    write_checkpoint(path, ArchDescriptor((2,), 1, 4, 1, 2, 1), np.zeros(10, np.float32))
    data = path.read_bytes()
    for bad in (b"XXXX" + data[4:], data[:-4], data[:10], data[:4] + b"\x09" + data[5:]):
        path.write_bytes(bad)
        with pytest.raises(CheckpointError):
            read_checkpoint(path)


def test_set_flat_shape_mismatch():
    layer = Linear(2, 2)
    with pytest.raises(ShapeMismatch):
        layer.set_flat(np.zeros(5))
