"""Flat-parameter MLPs: layout, batch invariance and gradients."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erlkit import net
from erlkit.exec import rng


def _spec(head="linear", layer_norm=False, hidden=(5, 4)):
    out = 3 if head != "tanh" else 2
    return net.MlpSpec(4, hidden, out, head=head, layer_norm=layer_norm, scale=2.0)


def test_param_count_and_roundtrip():
    spec = _spec(layer_norm=True, head="gaussian")
    # [DERIVED] 4*5+5 +5+5 + 5*4+4 +4+4 + 4*3+3 + 3 logstd
    assert net.param_count(spec) == 85
    p = np.arange(85.0)
    np.testing.assert_array_equal(net.flatten(spec, net.unflatten(spec, p)), p)


def test_init_params_glorot():
    spec = net.MlpSpec(100, (200,), 50, layer_norm=True)
    p = net.init_params(spec, rng.key_from_seed(0))
    layers = net.unflatten(spec, p)
    lim = np.sqrt(6 / 300)
    assert np.abs(layers[0]["W"]).max() <= lim
    assert np.all(layers[0]["b"] == 0) and np.all(layers[0]["gain"] == 1)


@given(st.integers(1, 9), st.integers(1, 7), st.integers(1, 6), st.integers(0, 3))
def test_dense_bitwise_equals_reference(batch, fan_in, fan_out, lead):
    g = np.random.default_rng(batch * 100 + fan_in * 10 + fan_out)
    shape = (lead,) if lead else ()
    x = g.standard_normal(shape + (batch, fan_in))
    W = g.standard_normal(shape + (fan_in, fan_out))
    b = g.standard_normal(shape + (fan_out,))
    out = net.dense(x, W, b)
    ref = net.dense_reference(x, W, b)
    assert out.shape == ref.shape
    assert np.array_equal(out, ref)


def test_dense_matches_matmul_closely(gen):
    x, W, b = gen.standard_normal((7, 30)), gen.standard_normal((30, 11)), gen.standard_normal(11)
    np.testing.assert_allclose(net.dense(x, W, b), x @ W + b, rtol=1e-12, atol=1e-12)


def test_forward_is_batch_invariant(gen):
    # a row's output never depends on which other rows share its batch
    spec = _spec(layer_norm=True, head="tanh", hidden=(33, 17))
    p = net.init_params(spec, rng.key_from_seed(1))
    obs = gen.standard_normal((64, 4))
    full = net.forward(spec, p, obs)
    for idx in ([5], [3, 9, 40], list(range(10, 64, 3))):
        assert np.array_equal(net.forward(spec, p, obs[idx]), full[idx])


def test_stacked_params_equal_individual(gen):
    spec = _spec(head="linear")
    ps = np.stack([net.init_params(spec, rng.key_from_seed(i)) for i in range(3)])
    obs = gen.standard_normal((3, 6, 4))
    out = net.forward(spec, ps, obs)
    for i in range(3):
        assert np.array_equal(out[i], net.forward(spec, ps[i], obs[i]))


def _fd_check(spec, p, obs, gen, rtol=1e-5):
    out = net.forward(spec, p, obs)
    if spec.head == "gaussian":
        w_mean = gen.standard_normal(out[0].shape)
        w_std = gen.standard_normal(out[1].shape)

        def f(q):
            m, s = net.forward(spec, q, obs)
            return float((m * w_mean).sum() + (s * w_std).sum())

        og = (w_mean, w_std)
    else:
        w = gen.standard_normal(out.shape)

        def f(q):
            return float((net.forward(spec, q, obs) * w).sum())

        og = w
    _, tape = net.forward(spec, p, obs, tape=True)
    g, dx = net.backward(spec, p, tape, og, input_grad=True)
    h = 1e-6
    num = np.array([(f(p + h * e) - f(p - h * e)) / (2 * h) for e in np.eye(p.size)])
    np.testing.assert_allclose(g, num, rtol=rtol, atol=1e-7)
    if spec.head != "gaussian":
        def fx(o):
            return float((net.forward(spec, p, o) * og).sum())

        numx = np.zeros_like(obs)
        for i in np.ndindex(obs.shape):
            d = np.zeros_like(obs)
            d[i] = h
            numx[i] = (fx(obs + d) - fx(obs - d)) / (2 * h)
        np.testing.assert_allclose(dx, numx, rtol=rtol, atol=1e-7)


@pytest.mark.parametrize("head", ["linear", "tanh", "gaussian", "categorical"])
@pytest.mark.parametrize("layer_norm", [False, True])
def test_backward_matches_finite_differences(head, layer_norm, gen):
    spec = _spec(head=head, layer_norm=layer_norm)
    p = net.init_params(spec, rng.key_from_seed(2)) + 0.1 * gen.standard_normal(net.param_count(spec))
    _fd_check(spec, p, gen.standard_normal((6, 4)), gen)


def test_tape_single_use(gen):
    spec = _spec()
    p = net.init_params(spec, rng.key_from_seed(0))
    out, tape = net.forward(spec, p, gen.standard_normal((2, 4)), tape=True)
    net.backward(spec, p, tape, np.ones_like(out))
    with pytest.raises(RuntimeError):
        net.backward(spec, p, tape, np.ones_like(out))


def test_non_finite_input_raises():
    spec = _spec()
    p = net.init_params(spec, rng.key_from_seed(0))
    with pytest.raises(FloatingPointError):
        net.forward(spec, p, np.full((1, 4), np.inf))


def test_wrong_param_count():
    with pytest.raises(ValueError):
        net.unflatten(_spec(), np.zeros(3))
