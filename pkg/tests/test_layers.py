import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsnn.errors import ConsistencyError, DomainError, ShapeError
from evsnn.layers import (
    DEFAULT_INPUT_SHAPE,
    DEFAULT_LAYERS,
    Conv,
    Dense,
    Flatten,
    Network,
    Pool,
    apply_delay,
    check_cache,
    conv_adjoint,
    conv_drive,
    conv_forward,
    delay_adjoint,
    dense_forward,
    flatten,
    network_forward,
    pool_adjoint,
    pool_drive,
    pool_forward,
    shape_chain,
    unflatten,
)
from evsnn.neuron import CubaParams, response_kernel

P = CubaParams()
LINEAR = CubaParams(v_thr=math.inf)


def test_default_shape_chain():
    assert shape_chain(DEFAULT_INPUT_SHAPE, DEFAULT_LAYERS) == [
        (2, 720, 720),
        (2, 90, 90),
        (16, 90, 90),
        (129600,),
        (512,),
        (13,),
    ]


def test_scaled_shape_chain_runtime():
    layers = (Pool(8), Conv(16, 5, 2), Flatten(), Dense(512), Dense(13))
    net = Network.build((2, 72, 72, 100), layers, seed=0)
    x = (np.random.default_rng(0).random((2, 72, 72, 100)) < 0.05).astype(np.uint8)
    out, cache = network_forward(net, x)
    assert out.shape == (13, 100)
    assert [lc.spikes.shape[:-1] for lc in cache.layers] == net.shapes[1:]


def test_shape_errors_name_layer():
    with pytest.raises(ShapeError, match="layer 0"):
        shape_chain((2, 70, 70, 5), (Pool(8),))
    with pytest.raises(ShapeError, match="layer 1"):
        shape_chain((2, 8, 8, 5), (Pool(2), Dense(3)))


def test_weight_shape_validation():
    with pytest.raises(ShapeError):
        Network((1, 4, 4, 3), [Flatten(), Dense(2)], [np.zeros(0), np.zeros((2, 15))])


# ---------------------------------------------------------------- pool


def test_pool_shapes_and_zero_input():
    x = np.zeros((2, 16, 16, 4), np.float32)
    s, _ = pool_forward(x, 8, 1.0, P)
    assert s.shape == (2, 2, 2, 4) and not s.any()


def test_pool_single_spike():
    x = np.zeros((1, 16, 16, 3), np.float32)
    x[0, 9, 2, 0] = 1
    s, _ = pool_forward(x, 8, 1.5, P)
    assert s[0, 1, 0, 0] == 1
    # the decaying synaptic current may refire the same cell later; others stay silent
    others = s.copy()
    others[0, 1, 0, :] = 0
    assert not others.any()
    _, v = pool_forward(x, 8, 1.5, P)
    assert v[0, 1, 0, 0] == 1.5


def test_pool_indivisible():
    with pytest.raises(ShapeError):
        pool_forward(np.zeros((1, 10, 10, 2)), 8, 1.0, P)


def test_pool_drive_window_sums():
    rng = np.random.default_rng(0)
    x = (rng.random((2, 6, 9, 4)) < 0.5).astype(np.uint8)
    z = pool_drive(x, 3, np.float64(0.5))
    for c, i, j, t in np.ndindex(z.shape):
        assert z[c, i, j, t] == 0.5 * x[c, 3 * i : 3 * i + 3, 3 * j : 3 * j + 3, t].sum()


def test_pool_silent_windows_stay_silent():
    rng = np.random.default_rng(1)
    x = (rng.random((2, 16, 16, 20)) < 0.3).astype(np.float32)
    x[:, :8, :8, :] = 0
    s, _ = pool_forward(x, 8, 1.0, P)
    assert not s[:, 0, 0, :].any()


# ---------------------------------------------------------------- conv


def test_conv_shape():
    x = np.zeros((2, 90, 90, 2), np.float32)
    w = np.zeros((16, 2, 5, 5), np.float32)
    s, _ = conv_forward(x, w, 2, P)
    assert s.shape == (16, 90, 90, 2)
    assert not s.any()


def test_conv_1x1_single_spike():
    x = np.zeros((1, 5, 5, 4))
    x[0, 3, 1, 2] = 1
    s, _ = conv_forward(x, np.full((1, 1, 1, 1), 2.0), 0, P)
    assert s[0, 3, 1, 2] == 1
    assert not s[..., :2].any()
    others = s.copy()
    others[0, 3, 1, :] = 0
    assert not others.any()


def _direct_conv(x, w, pad):
    out_ch, in_ch, k, _ = w.shape
    c, h, wd, steps = x.shape
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    z = np.zeros((out_ch, ho, wo, steps))
    for o, i, j, t in np.ndindex(out_ch, ho, wo, steps):
        acc = 0.0
        for ci in range(in_ch):
            for m in range(k):
                for n in range(k):
                    yy, xx = i + m - pad, j + n - pad
                    if 0 <= yy < h and 0 <= xx < wd:
                        acc += w[o, ci, m, n] * x[ci, yy, xx, t]
        z[o, i, j, t] = acc
    return z


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(1, 0), (3, 1), (3, 0), (5, 2)]))
def test_conv_linear_regime_matches_direct_sum(seed, kp):
    k, pad = kp
    rng = np.random.default_rng(seed)
    x = (rng.random((2, 8, 8, 5)) < 0.4).astype(np.float64)
    w = rng.normal(size=(3, 2, k, k))
    _, v = conv_forward(x, w, pad, LINEAR)
    z = _direct_conv(x, w, pad)
    eps = response_kernel(P, 5)
    ref = np.zeros_like(z)
    for t in range(5):
        for s in range(t + 1):
            ref[..., t] += eps[t - s] * z[..., s]
    np.testing.assert_allclose(v, ref, atol=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(1, 0), (3, 1), (3, 0), (5, 2), (3, 2)]))
def test_conv_adjoint_is_transpose(seed, kp):
    k, pad = kp
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 7, 3))
    w = rng.normal(size=(4, 2, k, k))
    z = conv_drive(x, w, pad)
    e = rng.normal(size=z.shape)
    lhs = np.sum(z * e)
    rhs = np.sum(x * conv_adjoint(e, w, pad, x.shape))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_pool_adjoint_is_transpose():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 6, 6, 3))
    z = pool_drive(x, 3, np.float64(0.7))
    e = rng.normal(size=z.shape)
    assert np.sum(z * e) == pytest.approx(np.sum(x * pool_adjoint(e, 3, 0.7)), rel=1e-12)


# ---------------------------------------------------------------- dense and flatten


def test_dense_single_connection():
    x = np.zeros((3, 4))
    x[1, 2] = 1
    w = np.zeros((2, 3))
    w[0, 1] = 1.25
    s, _ = dense_forward(x, w, P)
    assert s[0, 2] == 1 and s.sum() == 1
    assert not dense_forward(np.zeros((3, 4)), w, P)[0].any()


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        dense_forward(np.zeros((3, 4)), np.zeros((2, 4)), P)


def test_flatten_order_and_inverse():
    x = np.arange(2 * 3 * 4 * 5).reshape(2, 3, 4, 5)
    f = flatten(x)
    assert f.shape == (24, 5)
    assert np.array_equal(f[1 * 12 + 2 * 4 + 3], x[1, 2, 3])
    assert np.array_equal(unflatten(f, (2, 3, 4)), x)
    assert flatten(np.ones((1, 1, 1, 7))).shape == (1, 7)


def test_flatten_full_size_map():
    assert shape_chain((16, 90, 90, 1), (Flatten(),))[-1] == (129600,)


# ---------------------------------------------------------------- delays


def test_delay_examples():
    a = np.array([[1.0, 2.0, 4.0, 8.0]])
    np.testing.assert_array_equal(apply_delay(a, 0.0), a)
    np.testing.assert_array_equal(apply_delay(a, 1.0), [[0, 1, 2, 4]])
    np.testing.assert_allclose(apply_delay(a, 0.5), [[0.5, 1.5, 3.0, 6.0]])
    with pytest.raises(DomainError):
        apply_delay(a, -0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 6))
def test_delay_adjoint_is_transpose(seed, d):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 8))
    e = rng.normal(size=(2, 3, 8))
    dd = np.array([d, d / 2])
    assert np.sum(apply_delay(a, dd) * e) == pytest.approx(np.sum(a * delay_adjoint(e, dd)), rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------- network


def _small_net(seed=0, delays=False, dtype=np.float64):
    layers = (Pool(2), Conv(3, 3), Flatten(), Dense(6), Dense(4))
    return Network.build((2, 8, 8, 12), layers, seed=seed, gain=2.0, delays=delays, dtype=dtype)


def test_zero_input_zero_output():
    out, _ = network_forward(_small_net(), np.zeros((2, 8, 8, 12)))
    assert not out.any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_causality_by_truncation(seed, t):
    net = _small_net(seed)
    x = (np.random.default_rng(seed).random((2, 8, 8, 12)) < 0.4).astype(np.float64)
    full, _ = network_forward(net, x)
    part, _ = network_forward(net, x[..., :t])
    np.testing.assert_array_equal(part, full[:, :t])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_binary_outputs_and_reset_everywhere(seed):
    net = _small_net(seed)
    x = (np.random.default_rng(seed).random((2, 8, 8, 12)) < 0.5).astype(np.float64)
    _, cache = network_forward(net, x)
    for idx, lc in enumerate(cache.layers):
        assert set(np.unique(lc.spikes)) <= {0.0, 1.0}
        if lc.v_pre is not None:
            p = net.layer_params(idx)
            assert np.array_equal(lc.spikes == 1, lc.v_pre >= p.v_thr)


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeError):
        network_forward(_small_net(), np.zeros((2, 9, 8, 12)))


def test_check_cache():
    net = _small_net()
    _, cache = network_forward(net, np.zeros((2, 8, 8, 12)))
    check_cache(net, cache)
    other = Network.build((2, 8, 8, 12), (Pool(2), Flatten(), Dense(4)))
    with pytest.raises(ConsistencyError):
        check_cache(other, cache)


def test_build_deterministic_and_bounded():
    a, b = _small_net(7), _small_net(7)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    w = a.weights[3]
    assert np.abs(w).max() <= 2.0 / math.sqrt(w.shape[1])


def test_delayed_network_runs():
    net = _small_net(delays=True)
    net.delays[3][:] = 1.0
    x = (np.random.default_rng(0).random((2, 8, 8, 12)) < 0.5).astype(np.float64)
    out, cache = network_forward(net, x)
    np.testing.assert_array_equal(cache.layers[3].delayed[:, 1:], cache.layers[3].inputs[:, :-1])
    assert out.shape == (4, 12)


def test_negative_delay_rejected():
    net = _small_net(delays=True)
    delays = [None if d is None else -np.ones_like(d) for d in net.delays]
    with pytest.raises(DomainError):
        Network(net.input_shape, net.layers, net.weights, delays)
