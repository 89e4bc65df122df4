"""Spike-rate loss, surrogate-gradient backpropagation, Adam and the training loop.

Backward follows the SLAYER error-reassignment scheme. For a neuron layer
``l`` with error ``e`` at its output spike response::

    delta[t] = rho(v_pre[t]) * sum_{s >= 0} eps[s] * e[t + s]
    grad_W   = sum_t delta[t] a_in[t]^T       (through the layer's connectivity)
    e_below  = W^T delta                      (through the transposed connectivity)

``rho`` is the surrogate spike density evaluated at the pre-reset membrane
potential, ``eps`` the response kernel of the neurons receiving the spikes
and ``a_in`` the (delayed) spike response entering the layer. The reset is
treated as carrying no gradient.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConsistencyError, DataError, DomainError, NumericError, ShapeError
from .events import SpikeTensor
from .layers import (
    Conv,
    Dense,
    Flatten,
    Network,
    Pool,
    check_cache,
    conv_adjoint,
    conv_weight_grad,
    delay_adjoint,
    is_neuron_layer,
    network_forward,
    pool_adjoint,
)
from .neuron import ExponentialSurrogate, psp_correlate, surrogate_pdf


@dataclass(frozen=True)
class RateLossSpec:
    true_rate: float = 0.2
    false_rate: float = 0.03

    def __post_init__(self):
        if not 0 <= self.false_rate <= self.true_rate <= 1:
            raise DomainError("need 0 <= false_rate <= true_rate <= 1")

    @classmethod
    def from_params(cls, p):
        return cls(p.true_rate, p.false_rate)


def rate_loss(output_spikes, label: int, spec: RateLossSpec = RateLossSpec()):
    """Half squared error between output spike rates and their targets.

    Returns ``(loss, e_out)`` where the error ``(r - target) / T`` is spread
    evenly over the window.
    """
    out = np.asarray(output_spikes)
    n, steps = out.shape
    if steps == 0:
        raise DomainError("rate loss needs at least one timestep")
    if not 0 <= label < n:
        raise DomainError(f"label {label} outside 0..{n - 1}")
    rates = out.sum(axis=1, dtype=np.float64) / steps
    target = np.full(n, spec.false_rate)
    target[label] = spec.true_rate
    diff = rates - target
    loss = 0.5 * float(diff @ diff)
    dtype = out.dtype if np.issubdtype(out.dtype, np.floating) else np.float64
    e_out = np.repeat((diff / steps)[:, None], steps, axis=1).astype(dtype)
    return loss, e_out


# ---------------------------------------------------------------- backward


@dataclass
class Gradients:
    weights: list  # per layer: array shaped like the weights, or None
    delays: list  # per layer: array shaped like the delays, or None

    def as_dict(self):
        out = {}
        for idx, g in enumerate(self.weights):
            if g is not None:
                out[f"W{idx}"] = g
        for idx, g in enumerate(self.delays):
            if g is not None:
                out[f"d{idx}"] = g
        return out


def delay_grad(a, e, dt: float = 1.0):
    """``-sum_t da/dt * e * dt`` per leading channel, summed over everything else.

    The derivative uses central differences, one-sided at the window ends.
    """
    a = np.asarray(a)
    e = np.asarray(e)
    if a.shape[-1] < 2:
        raise DomainError("delay gradient needs at least two timesteps")
    slope = np.gradient(a, dt, axis=-1)
    prod = -(slope * e) * dt
    if prod.ndim == 1:
        return prod.sum()
    return prod.reshape(prod.shape[0], -1).sum(axis=1)


def _receiver_params(net: Network, idx: int):
    for j in range(idx + 1, len(net.layers)):
        if is_neuron_layer(net.layers[j]):
            return net.layer_params(j)
    return net.layer_params(idx)


def backward(net: Network, cache, e_out, surrogate=surrogate_pdf, dt: float = 1.0) -> Gradients:
    """Gradients of the loss for every trainable weight and enabled delay."""
    check_cache(net, cache)
    e = np.asarray(e_out, dtype=net.dtype)
    if e.shape != cache.output.shape:
        raise ConsistencyError(f"output error shape {e.shape} != output spikes {cache.output.shape}")
    n = len(net.layers)
    gw = [None] * n
    gd = [None] * n
    lowest = min(
        [i for i, s in enumerate(net.layers) if isinstance(s, (Conv, Dense))]
        + [i for i, d in enumerate(net.delays) if d is not None]
        + [n]
    )
    for idx in range(n - 1, lowest - 1, -1):
        spec = net.layers[idx]
        lc = cache.layers[idx]
        if isinstance(spec, Flatten):
            e = e.reshape(lc.inputs.shape)
            continue
        p = net.layer_params(idx)
        delta = surrogate(lc.v_pre, p) * psp_correlate(e, _receiver_params(net, idx))
        delta = delta.astype(net.dtype, copy=False)
        w = net.weights[idx]
        if isinstance(spec, Pool):
            e_in = pool_adjoint(delta, spec.kernel, w[0]) if idx > lowest or net.delays[idx] is not None else None
        elif isinstance(spec, Conv):
            gw[idx] = conv_weight_grad(delta, lc.response, spec.kernel, spec.pad)
            e_in = conv_adjoint(delta, w, spec.pad, lc.inputs.shape) if idx > lowest or net.delays[idx] is not None else None
        else:
            gw[idx] = delta @ lc.response.T
            e_in = w.T @ delta if idx > lowest or net.delays[idx] is not None else None
        d = net.delays[idx]
        if d is not None:
            gd[idx] = delay_grad(lc.response, e_in, dt).astype(net.dtype)
            e_in = delay_adjoint(e_in, d)
        e = e_in
    return Gradients(gw, gd)


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update applied in place to ``params``.

    Keys missing from ``grads`` are left alone. Delay entries (``d*``) are
    clamped at zero afterwards.
    """
    for key, g in grads.items():
        if key not in params:
            raise ShapeError(f"gradient for unknown parameter {key}")
        if g.shape != params[key].shape:
            raise ShapeError(f"{key}: gradient shape {g.shape} != parameter shape {params[key].shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {describe_key(key)}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    step_size = state.lr / bc1
    inv_bc2 = 1.0 / bc2
    for key, g in grads.items():
        p = params[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = v * inv_bc2
        np.sqrt(denom, out=denom)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= step_size
        p -= denom
        if key.startswith("d"):
            np.maximum(p, 0, out=p)
    return params, state


def describe_key(key):
    kind = "weights" if key[0] == "W" else "delays"
    return f"layer {key[1:]} {kind}"


# ---------------------------------------------------------------- prediction and metrics


def _values(x):
    return x.values if isinstance(x, SpikeTensor) else x


def predict(net: Network, x):
    """``(class, counts)``: argmax of output spike counts, ties to the lowest index."""
    out, _ = network_forward(net, _values(x), keep_cache=False)
    counts = out.sum(axis=1).astype(np.int64)
    return int(np.argmax(counts)), counts


def _threads():
    try:
        return max(1, int(os.environ.get("NDM_THREADS", "1")))
    except ValueError:
        return 1


def _score(net: Network, x, label, loss_spec):
    out, _ = network_forward(net, _values(x), keep_cache=False)
    counts = out.sum(axis=1)
    loss = rate_loss(out, label, loss_spec)[0] if loss_spec is not None else 0.0
    return int(np.argmax(counts)), loss


def evaluate(net: Network, samples, n_classes=None, loss_spec=None):
    """``(accuracy, confusion)`` with ``confusion[true, predicted]`` counts.

    With ``loss_spec`` the mean rate loss over the set is appended to the
    result, computed from the same forward passes.
    """
    samples = list(samples)
    if not samples:
        raise DataError("cannot evaluate an empty sample set")
    n_classes = n_classes or net.shapes[-1][0]
    workers = min(_threads(), len(samples))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            scored = list(pool.map(lambda s: _score(net, s[0], s[1], loss_spec), samples))
    else:
        scored = [_score(net, x, y, loss_spec) for x, y in samples]
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for (pred, _), (_, label) in zip(scored, samples):
        confusion[label, pred] += 1
    acc = float(np.trace(confusion) / len(samples))
    if loss_spec is None:
        return acc, confusion
    return acc, confusion, float(np.mean([loss for _, loss in scored]))


def mean_loss(net: Network, samples, spec: RateLossSpec):
    return evaluate(net, samples, loss_spec=spec)[2]


# ---------------------------------------------------------------- training loop


@dataclass
class FitConfig:
    epochs: int = 200
    lr: float = 3e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    train_delays: bool = False
    surrogate_width: float = 1.0  # multiplies the surrogate decay length
    target_accuracy: float | None = None  # stop once test accuracy reaches this


@dataclass
class EpochRecord:
    epoch: int
    loss: float  # mean train-set loss after the epoch
    train_acc: float
    test_acc: float
    wall_clock_s: float


@dataclass
class TrainReport:
    initial: EpochRecord
    epochs: list[EpochRecord]
    best_epoch: int
    best_test_acc: float
    confusion: list  # test confusion of the best checkpoint

    def to_dict(self, timing=True, config=None):
        def rec(r):
            d = asdict(r)
            if not timing:
                d["wall_clock_s"] = None
            return d

        out = {
            "initial": rec(self.initial),
            "epochs": [rec(r) for r in self.epochs],
            "best_epoch": self.best_epoch,
            "best_test_acc": self.best_test_acc,
            "confusion": self.confusion,
            "wall_clock_s": (self.initial.wall_clock_s + sum(r.wall_clock_s for r in self.epochs)) if timing else None,
        }
        if config is not None:
            out["config"] = config
        return out

    def to_json(self, timing=True, config=None):
        return json.dumps(self.to_dict(timing, config), indent=2, sort_keys=True) + "\n"


def train_sample(net: Network, x, label, loss_spec, state: AdamState, train_delays=False, surrogate=surrogate_pdf):
    """One batch-1 step: forward, loss, backward, Adam. Returns the loss."""
    out, cache = network_forward(net, _values(x))
    loss, e_out = rate_loss(out, label, loss_spec)
    grads = backward(net, cache, e_out, surrogate).as_dict()
    if not train_delays:
        grads = {k: g for k, g in grads.items() if k.startswith("W")}
    adam_step(net.parameters(), grads, state)
    return loss


def fit(net: Network, train, test, config: FitConfig = FitConfig(), progress=None):
    """Train ``net`` in place; returns ``(report, best_network)``.

    ``train``/``test`` are sequences of ``(spike tensor, label)``. Epoch 0 in
    the report is the evaluation before any update; the best network is the
    one with the highest test accuracy, earliest epoch on ties.
    """
    train = list(train)
    test = list(test)
    if not train:
        raise DataError("training set is empty")
    shape = tuple(net.input_shape[:3])
    for idx, (x, _) in enumerate(train + test):
        got = np.shape(_values(x))[:3]
        if got != shape:
            raise ShapeError(f"sample {idx}: shape {got} does not match network input {shape}")
    loss_spec = RateLossSpec.from_params(net.layer_params(len(net.layers) - 1))
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng(config.seed)
    surrogate = ExponentialSurrogate(config.surrogate_width)
    eval_test = test or train

    start = time.perf_counter()
    train_acc, _, train_loss = evaluate(net, train, loss_spec=loss_spec)
    test_acc, confusion = evaluate(net, eval_test)
    initial = EpochRecord(0, train_loss, train_acc, test_acc, time.perf_counter() - start)
    if progress:
        progress(initial)
    best, best_epoch, best_acc, best_conf = net.copy(), 0, test_acc, confusion

    records = []
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        for i in rng.permutation(len(train)):
            x, y = train[i]
            train_sample(net, x, y, loss_spec, state, config.train_delays, surrogate)
        train_acc, _, train_loss = evaluate(net, train, loss_spec=loss_spec)
        test_acc, confusion = evaluate(net, eval_test)
        rec = EpochRecord(epoch, train_loss, train_acc, test_acc, time.perf_counter() - start)
        records.append(rec)
        if progress:
            progress(rec)
        if test_acc > best_acc:
            best, best_epoch, best_acc, best_conf = net.copy(), epoch, test_acc, confusion
        if config.target_accuracy is not None and test_acc >= config.target_accuracy:
            break
    report = TrainReport(initial, records, best_epoch, best_acc, best_conf.tolist())
    return report, best
