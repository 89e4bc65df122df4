import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsnn.errors import DomainError, NumericError
from evsnn.neuron import (
    CubaParams,
    ExponentialSurrogate,
    NeuronState,
    cuba_run,
    cuba_step,
    psp,
    psp_correlate,
    response_kernel,
    surrogate_pdf,
)

P = CubaParams()
NO_THRESHOLD = CubaParams(v_thr=math.inf)


def test_defaults():
    assert P.astuple() == (1.25, 0.25, 0.03, 0.03, 3.0, 0.2, 0.03)


@pytest.mark.parametrize(
    "kw",
    [
        {"current_decay": -0.1},
        {"voltage_decay": 1.5},
        {"v_thr": 0.0},
        {"tau_grad": 0.0},
        {"scale_grad": -1.0},
        {"false_rate": 0.5, "true_rate": 0.2},
    ],
)
def test_param_domain(kw):
    with pytest.raises(DomainError):
        CubaParams(**kw)


# ---------------------------------------------------------------- single step


def test_step_zero():
    assert cuba_step(NeuronState(), 0.0, P) == (NeuronState(0.0, 0.0), 0)


def test_step_two_step_spike():
    s, z = cuba_step(NeuronState(), 1.0, P)
    assert (s.i, s.v, z) == (1.0, 1.0, 0)
    s, z = cuba_step(s, 0.0, P)
    assert z == 1
    assert s.i == pytest.approx(0.75)
    assert s.v == 0.0


def test_step_immediate_spike():
    s, z = cuba_step(NeuronState(), 2.0, P)
    assert z == 1 and s.i == 2.0 and s.v == 0.0


def test_step_non_finite():
    with pytest.raises(NumericError):
        cuba_step(NeuronState(), math.nan, P)
    with pytest.raises(NumericError):
        cuba_run(np.array([[1.0, math.inf]]), P)


def _reference_run(z, p):
    """Loop ``cuba_step`` over one input sequence."""
    state = NeuronState()
    spikes, v_pre = [], []
    for x in z:
        i = p.current_keep * state.i + x
        v_pre.append(p.voltage_keep * state.v + i)
        state, s = cuba_step(state, float(x), p)
        spikes.append(s)
    return np.array(spikes, float), np.array(v_pre)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 3), min_size=1, max_size=60))
def test_run_matches_step_loop(z):
    z = np.array(z)
    s, v = cuba_run(z[None, :], P)
    rs, rv = _reference_run(z, P)
    assert np.array_equal(s[0], rs)
    np.testing.assert_allclose(v[0], rv, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 3), min_size=1, max_size=60))
def test_reset_and_binary(z):
    s, v = cuba_run(np.array([z]), P)
    assert set(np.unique(s)) <= {0.0, 1.0}
    assert np.all(v[s == 1] >= P.v_thr)
    # after a spike the next pre-reset potential sees v = 0, so it equals the current
    state = NeuronState()
    for x in z:
        state, spike = cuba_step(state, x, P)
        if spike:
            assert state.v == 0.0


# ---------------------------------------------------------------- response kernel


def test_kernel_values():
    eps = response_kernel(P, 3)
    assert eps[0] == 1.0
    assert eps[1] == pytest.approx(1.72)
    assert eps[2] == pytest.approx(0.97**2 + 0.97 * 0.75 + 0.75**2)


def test_kernel_memoryless():
    p = CubaParams(current_decay=1.0, voltage_decay=1.0)
    assert response_kernel(p, 5).tolist() == [1.0, 0.0, 0.0, 0.0, 0.0]


def test_kernel_closed_form_dc_gain():
    eps = response_kernel(P, 3000)
    assert eps.sum() == pytest.approx(1 / (0.25 * 0.03), rel=1e-6)


def test_kernel_is_impulse_response():
    z = np.zeros((1, 50))
    z[0, 0] = 1.0
    _, v = cuba_run(z, NO_THRESHOLD)
    np.testing.assert_allclose(v[0], response_kernel(P, 50), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 80), st.integers(0, 10_000))
def test_linear_regime_matches_convolution(T, seed):
    z = np.random.default_rng(seed).uniform(-1, 1, T)
    _, v = cuba_run(z[None, :], NO_THRESHOLD)
    conv = np.convolve(z, response_kernel(P, T))[:T]
    np.testing.assert_allclose(v[0], conv, atol=1e-10)
    np.testing.assert_allclose(psp(z, P), conv, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 10_000))
def test_correlation_is_adjoint_of_convolution(T, seed):
    rng = np.random.default_rng(seed)
    x, e = rng.normal(size=T), rng.normal(size=T)
    assert np.dot(psp(x, P), e) == pytest.approx(np.dot(x, psp_correlate(e, P)), rel=1e-9, abs=1e-9)
    eps = response_kernel(P, T)
    direct = np.array([sum(eps[s] * e[t + s] for s in range(T - t)) for t in range(T)])
    np.testing.assert_allclose(psp_correlate(e, P), direct, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 200))
def test_decay_soundness(i0, v0, steps):
    # with no input, |i| never grows; without pending current, |v| never grows
    state = NeuronState(i0, v0)
    for _ in range(steps):
        nxt, spike = cuba_step(state, 0.0, NO_THRESHOLD)
        assert abs(nxt.i) <= abs(state.i) + 1e-15
        state = nxt
    state = NeuronState(0.0, v0)
    for _ in range(steps):
        nxt, _ = cuba_step(state, 0.0, NO_THRESHOLD)
        assert abs(nxt.v) <= abs(state.v) + 1e-15
        state = nxt


# ---------------------------------------------------------------- surrogate


def test_surrogate_peak():
    assert surrogate_pdf(1.25, P) == pytest.approx(2.4)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100))
def test_surrogate_symmetric_positive_and_peaked(d):
    a = surrogate_pdf(P.v_thr + d, P)
    b = surrogate_pdf(P.v_thr - d, P)
    assert a == pytest.approx(b, rel=1e-12, abs=0)
    assert a <= surrogate_pdf(P.v_thr, P)
    assert surrogate_pdf(P.v_thr + min(abs(d), 1.0), P) > 0


def test_surrogate_tails_and_integral():
    assert surrogate_pdf(1e6, P) == 0.0 and surrogate_pdf(-1e6, P) == 0.0
    v = np.linspace(-50, 50, 2_000_001)
    area = np.trapezoid(surrogate_pdf(v, P), v)
    # closed form: 2 * peak * width
    assert area == pytest.approx(2 * 2.4 * 0.03 * 1.25, rel=1e-4)
    assert v[np.argmax(surrogate_pdf(v, P))] == pytest.approx(1.25, abs=1e-4)


def test_exponential_surrogate_width_scale():
    wide = ExponentialSurrogate(10.0)
    assert wide(1.25, P) == pytest.approx(2.4)
    d = 0.03 * 1.25 * 10
    assert wide(1.25 + d, P) == pytest.approx(2.4 / math.e)
    assert ExponentialSurrogate()(0.7, P) == surrogate_pdf(0.7, P)
    with pytest.raises(DomainError):
        ExponentialSurrogate(0.0)
