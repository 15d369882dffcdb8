import numpy as np
import pytest

from stochastic_lwr._network import TaylorMLP


@pytest.fixture
def net():
    return TaylorMLP([2, 8, 8, 1])


@pytest.fixture
def params(net):
    return net.init_params(np.random.default_rng(0))


def inputs(rho, t):
    return [np.stack([rho, t], axis=1), np.tile([1.0, 0.0], (rho.size, 1)), None, np.tile([0.0, 1.0], (rho.size, 1))]


def value(net, params, rho, t):
    out, _ = net.forward(params, [np.stack([rho, t], axis=1)])
    return out[0][:, 0]


def test_parameter_count(net):
    assert net.n_params == 2 * 8 + 8 + 8 * 8 + 8 + 8 + 1
    assert repr(net) == "TaylorMLP(sizes=[2, 8, 8, 1])"
    with pytest.raises(ValueError, match="at least input and output"):
        TaylorMLP([3])


def test_init_zero_biases(net, params):
    w, b, _, _ = net._slices[0]
    assert np.all(params[b] == 0.0)
    assert np.all(np.abs(params[w]) <= np.sqrt(6.0 / 10))


def test_derivative_channels(net, params):
    rho = np.array([0.1, 0.4, 0.7])
    t = np.array([0.0, 0.3, 0.9])
    out, _ = net.forward(params, inputs(rho, t))
    h = 1e-4
    d1 = (value(net, params, rho + h, t) - value(net, params, rho - h, t)) / (2 * h)
    d2 = (value(net, params, rho + h, t) - 2 * value(net, params, rho, t) + value(net, params, rho - h, t)) / h**2
    dt = (value(net, params, rho, t + h) - value(net, params, rho, t - h)) / (2 * h)
    assert np.allclose(out[1][:, 0], d1, rtol=1e-6, atol=1e-8)
    assert np.allclose(out[2][:, 0], d2, rtol=1e-4, atol=1e-5)
    assert np.allclose(out[3][:, 0], dt, rtol=1e-6, atol=1e-8)


def test_skipped_channels_stay_none(net, params):
    out, _ = net.forward(params, [np.zeros((2, 2))])
    assert out[1] is None
    assert out[2] is None
    assert out[3] is None


def test_backward_matches_finite_differences(net, params):
    rho = np.array([0.2, 0.5, 0.8])
    t = np.array([0.1, 0.2, 0.3])
    rng = np.random.default_rng(1)
    cotangents = [rng.normal(size=(3, 1)) for _ in range(4)]
    cotangents[2] = None

    def functional(p):
        out, _ = net.forward(p, inputs(rho, t))
        return sum(np.sum(c * o) for c, o in zip(cotangents, out, strict=True) if c is not None)

    _, caches = net.forward(params, inputs(rho, t))
    grad = net.backward(params, caches, cotangents)
    h = 1e-6
    for k in rng.choice(net.n_params, size=15, replace=False):
        step = np.zeros(net.n_params)
        step[k] = h
        fd = (functional(params + step) - functional(params - step)) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_backward_second_channel(net, params):
    rho = np.array([0.3, 0.6])
    t = np.array([0.5, 0.5])
    first = np.tile([1.0, 0.0], (2, 1))
    second = np.tile([0.0, 0.0], (2, 1))
    channels = [np.stack([rho, t], axis=1), first, second, None]
    cotangents = [None, None, np.ones((2, 1)), None]

    def functional(p):
        out, _ = net.forward(p, channels)
        return float(np.sum(out[2]))

    _, caches = net.forward(params, channels)
    grad = net.backward(params, caches, cotangents)
    h = 1e-6
    for k in range(0, net.n_params, 7):
        step = np.zeros(net.n_params)
        step[k] = h
        fd = (functional(params + step) - functional(params - step)) / (2 * h)
        assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-7)
