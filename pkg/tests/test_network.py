import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cowm.layer import CowmLayer, LinearLayer
from cowm.network import (
    Mlp,
    UsageError,
    activate,
    activation_grad,
    gaussian_logprob_grad,
    mse_loss,
)
from cowm.numerics import ShapeError


def fd_weight_grads(net, x, y, h=1e-6):
    grads = []
    for layer in net.layers:
        g = np.zeros_like(layer.weights)
        for idx in np.ndindex(*layer.weights.shape):
            orig = layer.weights[idx]
            layer.weights[idx] = orig + h
            lp = mse_loss(net(x), y)[0]
            layer.weights[idx] = orig - h
            lm = mse_loss(net(x), y)[0]
            layer.weights[idx] = orig
            g[idx] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_finite_difference_gradients(act):
    for seed in range(5):
        r = np.random.default_rng(seed)
        net = Mlp.build([3, 5, 4, 2], r, activation=act, bias=True)
        for layer in net.layers:
            layer.bias = r.standard_normal(layer.d_out)
        x, y = r.standard_normal((3, 6)), r.standard_normal((2, 6))
        pred, cache = net.forward(x)
        _, grad = mse_loss(pred, y)
        analytic = net.weight_gradients(cache, grad)
        numeric = fd_weight_grads(net, x, y)
        for a, n in zip(analytic, numeric):
            assert rel_err(a, n) <= 1e-5


@pytest.mark.parametrize("name", ["tanh", "relu", "identity"])
def test_activation_derivative(name, rng):
    a = rng.standard_normal(50)
    a = a[np.abs(a) > 1e-3]  # away from relu's kink
    h = 1e-6
    fd = (activate(name, a + h) - activate(name, a - h)) / (2 * h)
    assert np.all(np.abs(fd - activation_grad(name, a)) <= 1e-6 * np.maximum(1.0, np.abs(fd)))


def test_forward_examples():
    net = Mlp([LinearLayer(np.eye(3)), LinearLayer(np.eye(3))], ["identity", "identity"])
    x = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(net(x), x)
    tanh_net = Mlp.build([3, 4, 2], np.random.default_rng(0), bias=True, output_activation="tanh")
    assert np.array_equal(tanh_net(np.zeros((3, 1))), np.zeros((2, 1)))
    relu_net = Mlp(
        [LinearLayer([[1.0, -1.0], [2.0, 1.0]]), LinearLayer([[1.0], [3.0]])],
        ["relu", "identity"],
    )
    # hidden = relu([1*1+2*2, -1*1+1*2]) = relu([5, 1]); out = 5 + 3
    assert np.array_equal(relu_net([[1.0], [2.0]]), [[8.0]])


def test_layer_chain_validated():
    with pytest.raises(ShapeError):
        Mlp([LinearLayer(np.ones((2, 3))), LinearLayer(np.ones((2, 1)))])
    with pytest.raises(ValueError):
        Mlp([LinearLayer(np.ones((2, 3)))], ["tanh", "tanh"])


def test_zero_grad_output_changes_nothing(rng):
    net = Mlp.build([3, 4, 2], rng, cowm=True, bias=True)
    x = rng.standard_normal((3, 5))
    _, cache = net.forward(x, training=True)
    before = [l.weights.copy() for l in net.layers]
    net.backward_and_step(cache, np.zeros((2, 5)), 0.1)
    assert all(np.array_equal(b, l.weights) for b, l in zip(before, net.layers))


def test_single_linear_mse_step_matches_closed_form(rng):
    w = rng.standard_normal((4, 2))
    net = Mlp([LinearLayer(w)], ["identity"])
    x, y = rng.standard_normal((4, 8)), rng.standard_normal((2, 8))
    pred, cache = net.forward(x, training=True)
    _, grad = mse_loss(pred, y)
    net.backward_and_step(cache, grad, 0.3)
    # ∂/∂W of mean ½‖Wᵀx−y‖² is x (Wᵀx−y)ᵀ / (entries)
    expected = w - 0.3 * x @ (w.T @ x - y).T / y.size
    assert np.allclose(net.layers[0].weights, expected, atol=1e-14)


def test_cowm_layer_input_in_span_no_change(rng):
    layer = CowmLayer(rng.standard_normal((4, 2)), ridge=0.0)
    a = rng.standard_normal((4, 1))
    layer.set_preserved(a)
    net = Mlp([layer], ["identity"])
    x = a @ rng.standard_normal((1, 3))
    pred, cache = net.forward(x, training=True)
    w0 = layer.weights.copy()
    net.backward_and_step(cache, rng.standard_normal((2, 3)), 0.5)
    assert np.abs(layer.weights - w0).max() <= 1e-12


def test_stale_cache_rejected(rng):
    net = Mlp.build([2, 3, 1], rng)
    _, cache = net.forward(np.ones((2, 1)), training=True)
    net.backward_and_step(cache, np.ones((1, 1)), 0.1)
    with pytest.raises(UsageError):
        net.backward_and_step(cache, np.ones((1, 1)), 0.1)
    _, inf_cache = net.forward(np.ones((2, 1)), training=False)
    with pytest.raises(UsageError):
        net.backward_and_step(inf_cache, np.ones((1, 1)), 0.1)
    other = Mlp.build([2, 3, 1], rng)
    _, foreign = other.forward(np.ones((2, 1)), training=True)
    with pytest.raises(UsageError):
        net.backward_and_step(foreign, np.ones((1, 1)), 0.1)


def train_trajectory(seed):
    r = np.random.default_rng(seed)
    net = Mlp.build([4, 6, 2], r, cowm=True, bias=True, seed=seed)
    for _ in range(30):
        x = r.standard_normal((4, 8)) + 1.0
        pred, cache = net.forward(x, training=True)
        net.backward_and_step(cache, mse_loss(pred, r.standard_normal((2, 8)))[1], 0.05)
    return [l.weights for l in net.layers]


def test_training_is_deterministic():
    a, b = train_trajectory(3), train_trajectory(3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_checkpoint_round_trip(tmp_path, rng):
    net = Mlp.build([3, 4, 2], rng, cowm=True, bias=True)
    for _ in range(4):
        pred, cache = net.forward(rng.standard_normal((3, 5)) + 1, training=True)
        net.backward_and_step(cache, pred, 0.1)
    path = tmp_path / "net.json"
    net.save(path)
    back = Mlp.load(path)
    assert back.state_hash() == net.state_hash()
    x = rng.standard_normal((3, 4))
    assert np.array_equal(back(x), net(x))


def test_mse_examples():
    p = np.arange(4.0).reshape(2, 2)
    loss, grad = mse_loss(p, p)
    assert loss == 0.0 and np.array_equal(grad, np.zeros((2, 2)))
    loss, grad = mse_loss(p + 1, p)
    assert loss == pytest.approx(0.5) and np.allclose(grad, 0.25)
    loss2, _ = mse_loss(p + 2, p)
    assert loss2 == pytest.approx(4 * loss)
    with pytest.raises(ShapeError):
        mse_loss(np.ones((2, 2)), np.ones((2, 1)))


def test_gaussian_examples():
    mean = np.array([[0.3, -1.0]])
    _, gm, _ = gaussian_logprob_grad(mean, [0.2], mean)
    assert np.array_equal(gm, np.zeros_like(mean))
    lp, _, _ = gaussian_logprob_grad([[0.0]], [0.0], [[1.0]])
    assert lp[0] == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-15)
    with pytest.raises(FloatingPointError):
        gaussian_logprob_grad([[0.0]], [np.inf], [[1.0]])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gaussian_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    mean, action = r.standard_normal((3, 4)), r.standard_normal((3, 4))
    log_std = r.uniform(-1, 1, 3)
    _, gm, gls = gaussian_logprob_grad(mean, log_std, action)
    h = 1e-6
    for i, j in np.ndindex(3, 4):
        mp, mm = mean.copy(), mean.copy()
        mp[i, j] += h
        mm[i, j] -= h
        fd = (gaussian_logprob_grad(mp, log_std, action)[0][j] - gaussian_logprob_grad(mm, log_std, action)[0][j]) / (2 * h)
        assert abs(fd - gm[i, j]) <= 1e-6 * max(1.0, abs(fd))
    for i in range(3):
        lp, lm = log_std.copy(), log_std.copy()
        lp[i] += h
        lm[i] -= h
        fd = (gaussian_logprob_grad(mean, lp, action)[0] - gaussian_logprob_grad(mean, lm, action)[0]) / (2 * h)
        assert np.all(np.abs(fd - gls[i]) <= 1e-6 * np.maximum(1.0, np.abs(fd)))
