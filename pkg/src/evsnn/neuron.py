"""Current-based leaky integrate-and-fire (CUBA LIF) dynamics.

One discrete step, in this order::

    i <- (1 - current_decay) * i + input
    v <- (1 - voltage_decay) * v + i
    spike if v >= v_thr, then v <- 0          (hard reset)

Below threshold the map from input to membrane potential is linear and time
invariant; its impulse response is :func:`response_kernel`.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np
from numba import njit
from scipy.signal import lfilter

from .errors import DomainError, NumericError


@dataclass(frozen=True)
class CubaParams:
    """Neuron constants. Field order is the checkpoint order."""

    v_thr: float = 1.25
    current_decay: float = 0.25
    voltage_decay: float = 0.03
    tau_grad: float = 0.03
    scale_grad: float = 3.0
    true_rate: float = 0.2
    false_rate: float = 0.03

    def __post_init__(self):
        if not (0 <= self.current_decay <= 1 and 0 <= self.voltage_decay <= 1):
            raise DomainError("decays must lie in [0, 1]")
        if not self.v_thr > 0:
            raise DomainError("v_thr must be positive")
        if not (self.tau_grad > 0 and self.scale_grad > 0):
            raise DomainError("tau_grad and scale_grad must be positive")
        if not 0 <= self.false_rate <= self.true_rate <= 1:
            raise DomainError("need 0 <= false_rate <= true_rate <= 1")

    def astuple(self):
        return astuple(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @property
    def current_keep(self):
        return 1.0 - self.current_decay

    @property
    def voltage_keep(self):
        return 1.0 - self.voltage_decay


@dataclass(frozen=True)
class NeuronState:
    i: float = 0.0
    v: float = 0.0


def cuba_step(state: NeuronState, weighted_input: float, p: CubaParams):
    """Advance one neuron by one timestep; returns ``(new_state, spike)``."""
    if not (math.isfinite(weighted_input) and math.isfinite(state.i) and math.isfinite(state.v)):
        raise NumericError(f"non-finite neuron input {weighted_input!r} or state {state!r}")
    i = p.current_keep * state.i + weighted_input
    v = p.voltage_keep * state.v + i
    if v >= p.v_thr:
        return NeuronState(i, 0.0), 1
    return NeuronState(i, v), 0


@njit(cache=True)
def _cuba_kernel(z, ci, cv, thr, spikes, v_pre):
    # state lives in double precision registers whatever the storage dtype
    n_neurons, steps = z.shape
    for n in range(n_neurons):
        i = 0.0
        v = 0.0
        for t in range(steps):
            i = ci * i + z[n, t]
            v = cv * v + i
            v_pre[n, t] = v
            if v >= thr:
                spikes[n, t] = 1.0
                v = 0.0


def cuba_run(z, p: CubaParams):
    """Run a population of independent neurons over the last axis of ``z``.

    Returns ``(spikes, v_pre)`` in the dtype of ``z``; ``v_pre`` is the
    membrane potential after integration and before the reset.
    """
    z = np.asarray(z)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float32)
    if not np.isfinite(z).all():
        raise NumericError("non-finite weighted input to neurons")
    shape = z.shape
    flat = np.ascontiguousarray(z.reshape(-1, shape[-1]))
    spikes = np.zeros_like(flat)
    v_pre = np.empty_like(flat)
    _cuba_kernel(flat, p.current_keep, p.voltage_keep, p.v_thr, spikes, v_pre)
    return spikes.reshape(shape), v_pre.reshape(shape)


def response_kernel(p: CubaParams, length: int, dtype=np.float64) -> np.ndarray:
    """Sub-threshold membrane response to a unit input at t = 0."""
    if length < 1:
        raise DomainError("kernel length must be >= 1")
    t = np.arange(length)
    s = t[None, :]
    terms = np.where(s <= t[:, None], p.voltage_keep ** np.maximum(t[:, None] - s, 0) * p.current_keep**s, 0.0)
    return terms.sum(axis=1).astype(dtype)


def _filter_coeffs(p: CubaParams):
    ci, cv = p.current_keep, p.voltage_keep
    return np.array([1.0]), np.array([1.0, -(ci + cv), ci * cv])


def psp(x, p: CubaParams):
    """Causal convolution of ``x`` (time on the last axis) with the response kernel."""
    x = np.asarray(x)
    b, a = _filter_coeffs(p)
    return lfilter(b, a, x, axis=-1).astype(x.dtype, copy=False)


def psp_correlate(e, p: CubaParams):
    """Anti-causal correlation with the response kernel, truncated at the window end.

    ``out[t] = sum_{s >= 0} kernel[s] * e[t + s]``: credit flows from future to past.
    """
    e = np.asarray(e)
    b, a = _filter_coeffs(p)
    return lfilter(b, a, e[..., ::-1], axis=-1)[..., ::-1].astype(e.dtype, copy=False)


def surrogate_pdf(v, p: CubaParams, width_scale: float = 1.0):
    """Two-sided exponential spike-derivative surrogate, peaked at threshold.

    The decay length is ``tau_grad * v_thr * width_scale``; the peak height
    ``scale_grad / v_thr`` does not depend on ``width_scale``.
    """
    v = np.asarray(v)
    width = p.tau_grad * p.v_thr * width_scale
    return (p.scale_grad / p.v_thr) * np.exp(-np.abs(v - p.v_thr) / width)


@dataclass(frozen=True)
class ExponentialSurrogate:
    """``surrogate_pdf`` with a fixed width scale, usable as a backward callable."""

    width_scale: float = 1.0

    def __post_init__(self):
        if not self.width_scale > 0:
            raise DomainError(f"width_scale must be positive, got {self.width_scale}")

    def __call__(self, v, p: CubaParams):
        return surrogate_pdf(v, p, self.width_scale)
