"""Spiking layers and whole-network forward.

All activity is dense over the binned time axis, time last:
``(channels, height, width, T)`` for maps and ``(units, T)`` after flatten.
Every neuron layer turns its synaptic drive into spikes with
:func:`~evsnn.neuron.cuba_run`. No layer has a bias.

Flatten order is channel, then row, then column (C order); checkpoints rely
on it.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConsistencyError, DomainError, ShapeError
from .events import SpikeTensor
from .neuron import CubaParams, cuba_run, psp


# ---------------------------------------------------------------- layer specs


@dataclass(frozen=True)
class Pool:
    kernel: int
    weight: float = 1.0  # fixed synaptic weight, never trained
    params: CubaParams | None = None


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    padding: int | None = None  # None means kernel // 2
    params: CubaParams | None = None

    @property
    def pad(self):
        return self.kernel // 2 if self.padding is None else self.padding


@dataclass(frozen=True)
class Flatten:
    params: CubaParams | None = None


@dataclass(frozen=True)
class Dense:
    out_units: int
    params: CubaParams | None = None


LayerSpec = Pool | Conv | Flatten | Dense

# 4-layer driver-motion network on a 720x720 crop
DEFAULT_LAYERS = (Pool(8), Conv(16, 5, 2), Flatten(), Dense(512), Dense(13))
DEFAULT_INPUT_SHAPE = (2, 720, 720, 400)


def layer_name(spec) -> str:
    return type(spec).__name__.lower()


def output_shape(spec, in_shape):
    """Static shape rule, excluding the time axis."""
    if isinstance(spec, Pool):
        if len(in_shape) != 3:
            raise ShapeError(f"pool expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        k = spec.kernel
        if k < 1 or h % k or w % k:
            raise ShapeError(f"pool kernel {k} does not divide {h}x{w}")
        return (c, h // k, w // k)
    if isinstance(spec, Conv):
        if len(in_shape) != 3:
            raise ShapeError(f"conv expects (C, H, W), got {in_shape}")
        c, h, w = in_shape
        ho = h + 2 * spec.pad - spec.kernel + 1
        wo = w + 2 * spec.pad - spec.kernel + 1
        if ho < 1 or wo < 1 or spec.pad < 0:
            raise ShapeError(f"conv kernel {spec.kernel} pad {spec.pad} too large for {h}x{w}")
        return (spec.out_channels, ho, wo)
    if isinstance(spec, Flatten):
        return (math.prod(in_shape),)
    if isinstance(spec, Dense):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects flat input, got {in_shape}; add a flatten layer")
        return (spec.out_units,)
    raise TypeError(f"unknown layer spec {spec!r}")


def shape_chain(input_shape, layers):
    """Per-layer activity shapes, input first, time axis excluded."""
    shapes = [tuple(input_shape[:-1]) if len(input_shape) == 4 else tuple(input_shape)]
    for idx, spec in enumerate(layers):
        try:
            shapes.append(output_shape(spec, shapes[-1]))
        except ShapeError as exc:
            raise ShapeError(f"layer {idx} ({layer_name(spec)}): {exc}") from None
    return shapes


def weight_shape(spec, in_shape):
    if isinstance(spec, Pool):
        return (1,)
    if isinstance(spec, Conv):
        return (spec.out_channels, in_shape[0], spec.kernel, spec.kernel)
    if isinstance(spec, Dense):
        return (spec.out_units, in_shape[0])
    return (0,)


def is_neuron_layer(spec):
    return not isinstance(spec, Flatten)


def is_trainable(spec):
    return isinstance(spec, (Conv, Dense))


# ---------------------------------------------------------------- network


class Network:
    """Ordered layers with their weights and optional per-channel axonal delays.

    ``weights[l]`` is ``(1,)`` holding the fixed pool weight for pool layers,
    ``(out, in, k, k)`` for conv, ``(out, in)`` for dense and empty for
    flatten. ``delays[l]`` is ``None`` when delays are disabled, otherwise one
    non-negative delay (in timesteps) per input channel of the layer.
    """

    def __init__(self, input_shape, layers, weights, delays=None, params=None, dtype=np.float32):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.params = params or CubaParams()
        self.dtype = np.dtype(dtype)
        self.shapes = shape_chain(self.input_shape, self.layers)
        if len(weights) != len(self.layers):
            raise ShapeError(f"{len(weights)} weight arrays for {len(self.layers)} layers")
        self.weights = []
        for idx, (spec, w) in enumerate(zip(self.layers, weights)):
            want = weight_shape(spec, self.shapes[idx])
            w = np.asarray(w, dtype=self.dtype)
            if w.shape != want:
                raise ShapeError(f"layer {idx} ({layer_name(spec)}): weight shape {w.shape}, expected {want}")
            if not np.isfinite(w).all():
                raise ShapeError(f"layer {idx} ({layer_name(spec)}): non-finite weights")
            self.weights.append(w)
        if delays is None:
            delays = [None] * len(self.layers)
        self.delays = []
        for idx, (spec, d) in enumerate(zip(self.layers, delays)):
            if d is not None:
                d = np.asarray(d, dtype=self.dtype)
                if not is_neuron_layer(spec) or d.shape != (self.shapes[idx][0],):
                    raise ShapeError(f"layer {idx} ({layer_name(spec)}): bad delay shape {d.shape}")
                if (d < 0).any():
                    raise DomainError(f"layer {idx}: negative axonal delay")
            self.delays.append(d)

    @classmethod
    def build(
        cls,
        input_shape=DEFAULT_INPUT_SHAPE,
        layers=DEFAULT_LAYERS,
        params=None,
        seed=0,
        gain=0.4,
        delays=False,
        dtype=np.float32,
    ):
        """Fresh network, weights uniform in ``+-gain / sqrt(fan_in)``."""
        dtype = np.dtype(dtype)
        shapes = shape_chain(input_shape, layers)
        rng = np.random.default_rng(seed)
        weights = []
        for spec, in_shape in zip(layers, shapes):
            shape = weight_shape(spec, in_shape)
            if isinstance(spec, Pool):
                weights.append(np.full(shape, spec.weight, dtype))
            elif is_trainable(spec):
                bound = gain / math.sqrt(math.prod(shape[1:]))
                w = rng.random(shape, dtype=dtype)
                w *= 2 * bound
                w -= bound
                weights.append(w)
            else:
                weights.append(np.zeros(shape, dtype))
        delay_list = None
        if delays:
            delay_list = [
                np.zeros(s[0], dtype) if is_neuron_layer(spec) else None for spec, s in zip(layers, shapes)
            ]
        return cls(input_shape, layers, weights, delay_list, params, dtype)

    @property
    def output_shape(self):
        return self.shapes[-1] + (self.input_shape[-1],)

    @property
    def has_delays(self):
        return any(d is not None for d in self.delays)

    def layer_params(self, idx) -> CubaParams:
        return self.layers[idx].params or self.params

    def describe(self):
        rows = [f"input {'x'.join(map(str, self.shapes[0]))}"]
        for spec, shape in zip(self.layers, self.shapes[1:]):
            rows.append(f"{layer_name(spec)} -> {'x'.join(map(str, shape))}")
        return rows

    def copy(self):
        return copy.deepcopy(self)

    def parameters(self):
        """Trainable arrays keyed ``W<l>`` / ``d<l>`` (views into the network)."""
        out = {}
        for idx, spec in enumerate(self.layers):
            if is_trainable(spec):
                out[f"W{idx}"] = self.weights[idx]
            if self.delays[idx] is not None:
                out[f"d{idx}"] = self.delays[idx]
        return out


# ---------------------------------------------------------------- primitives


def _as_channels(d, a):
    d = np.broadcast_to(np.asarray(d, dtype=np.float64), (a.shape[0],))
    if (d < 0).any():
        raise DomainError("axonal delay must be non-negative")
    return d


def apply_delay(a, d):
    """Shift ``a`` later in time by ``d`` steps (per leading channel), linear interpolation.

    ``out[t] = (1 - f) * a[t - n] + f * a[t - n - 1]`` with ``n = floor(d)``,
    ``f = d - n``; samples from before the start are zero.
    """
    a = np.asarray(a)
    d = _as_channels(d, a)
    if not d.any():
        return a.copy()
    steps = a.shape[-1]
    flat = a.reshape(a.shape[0], -1, steps)
    n = np.floor(d).astype(np.int64)[:, None, None]
    f = (d - np.floor(d)).astype(a.dtype)[:, None, None]
    t = np.arange(steps)[None, None, :]
    out = np.zeros_like(flat)
    for shift, weight in ((n, 1 - f), (n + 1, f)):
        src = t - shift
        ok = src >= 0
        gathered = np.take_along_axis(flat, np.broadcast_to(np.maximum(src, 0), (flat.shape[0], 1, steps)), axis=-1)
        out += np.where(ok, gathered, 0) * weight
    return out.reshape(a.shape)


def delay_adjoint(e, d):
    """Transpose of :func:`apply_delay`: routes error back to the undelayed signal."""
    e = np.asarray(e)
    d = _as_channels(d, e)
    if not d.any():
        return e.copy()
    steps = e.shape[-1]
    flat = e.reshape(e.shape[0], -1, steps)
    n = np.floor(d).astype(np.int64)[:, None, None]
    f = (d - np.floor(d)).astype(e.dtype)[:, None, None]
    t = np.arange(steps)[None, None, :]
    out = np.zeros_like(flat)
    for shift, weight in ((n, 1 - f), (n + 1, f)):
        src = t + shift
        ok = src < steps
        gathered = np.take_along_axis(
            flat, np.broadcast_to(np.minimum(src, steps - 1), (flat.shape[0], 1, steps)), axis=-1
        )
        out += np.where(ok, gathered, 0) * weight
    return out.reshape(e.shape)


def pool_drive(x, k, w):
    c, h, wd, steps = x.shape
    if h % k or wd % k:
        raise ShapeError(f"pool kernel {k} does not divide {h}x{wd}")
    dtype = np.asarray(w).dtype
    z = x.reshape(c, h // k, k, wd // k, k, steps).sum(axis=(2, 4), dtype=dtype)
    z *= w
    return z


def pool_adjoint(delta, k, w):
    return np.repeat(np.repeat(delta * w, k, axis=1), k, axis=2)


def _conv_windows(x, k, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    # (C, Ho, Wo, T, k, k)
    return sliding_window_view(xp, (k, k), axis=(1, 2))


def conv_drive(x, w, pad):
    out_ch, in_ch, k, _ = w.shape
    if x.shape[0] != in_ch:
        raise ShapeError(f"conv weights expect {in_ch} input channels, got {x.shape[0]}")
    return np.tensordot(w, _conv_windows(x, k, pad), axes=([1, 2, 3], [0, 4, 5]))


def conv_weight_grad(delta, a, k, pad):
    return np.tensordot(delta, _conv_windows(a, k, pad), axes=([1, 2, 3], [1, 2, 3]))


def conv_adjoint(delta, w, pad, in_shape):
    """Full transposed correlation of ``delta`` with ``w`` back onto the input map."""
    _, in_ch, k, _ = w.shape
    _, ho, wo, steps = delta.shape
    h, wd = in_shape[1], in_shape[2]
    acc = np.zeros((in_ch, h + 2 * pad, wd + 2 * pad, steps), dtype=delta.dtype)
    for m in range(k):
        for n in range(k):
            acc[:, m : m + ho, n : n + wo, :] += np.tensordot(w[:, :, m, n], delta, axes=([0], [0]))
    return acc[:, pad : pad + h, pad : pad + wd, :]


def flatten(x):
    """``(C, H, W, T)`` to ``(C*H*W, T)`` in (c, y, x) order."""
    return x.reshape(-1, x.shape[-1])


def unflatten(x, shape):
    return x.reshape(tuple(shape) + (x.shape[-1],))


def _neuron(z, p):
    spikes, v_pre = cuba_run(z, p)
    return spikes, v_pre


def pool_forward(x, k, w_pool, p: CubaParams):
    x = _as_float(x)
    z = pool_drive(x, k, x.dtype.type(w_pool))
    return _neuron(z, p)


def conv_forward(x, w, padding, p: CubaParams):
    x = _as_float(x, w.dtype)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv weights must be (out, in, k, k), got {w.shape}")
    return _neuron(conv_drive(x, w, padding), p)


def dense_forward(x, w, p: CubaParams):
    x = _as_float(x, w.dtype)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"dense weights {w.shape} do not match input {x.shape}")
    return _neuron(w @ x, p)


def _as_float(x, dtype=None):
    if isinstance(x, SpikeTensor):
        x = x.values
    x = np.asarray(x)
    if dtype is not None and x.dtype != dtype:
        return x.astype(dtype)
    if not np.issubdtype(x.dtype, np.floating):
        return x.astype(np.float32)
    return x


# ---------------------------------------------------------------- network forward


@dataclass
class LayerCache:
    """What backward needs from one layer.

    ``inputs`` are the incoming spikes, ``delayed`` the same after axonal
    delay, ``response`` their spike response (``None`` when no gradient ever
    needs it), ``v_pre`` the pre-reset membrane trace and ``spikes`` the output.
    """

    inputs: np.ndarray
    delayed: np.ndarray
    response: np.ndarray | None
    v_pre: np.ndarray | None
    spikes: np.ndarray


@dataclass
class ForwardCache:
    layers: list[LayerCache] = field(default_factory=list)
    network_id: int = 0

    @property
    def output(self):
        return self.layers[-1].spikes


def network_forward(net: Network, x, keep_cache=True):
    """Run ``x`` (``(C, H, W, T)``) through the network.

    Returns ``(output_spikes, cache)``; output spikes are ``(N_out, T)``.
    With ``keep_cache=False`` the cache is ``None`` and responses are not
    computed.
    """
    if isinstance(x, SpikeTensor):
        x = x.values
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[:3] != tuple(net.input_shape[:3]):
        raise ShapeError(f"input shape {x.shape} does not match network input {net.input_shape[:3]} + (T,)")
    cache = ForwardCache(network_id=id(net)) if keep_cache else None
    for idx, spec in enumerate(net.layers):
        try:
            x = _layer_forward(net, idx, spec, x, cache)
        except ShapeError as exc:
            raise ShapeError(f"layer {idx} ({layer_name(spec)}): {exc}") from None
    return x, cache


def _layer_forward(net, idx, spec, x, cache):
    if isinstance(spec, Flatten):
        out = flatten(x)
        if cache is not None:
            cache.layers.append(LayerCache(x, x, None, None, out))
        return out
    p = net.layer_params(idx)
    d = net.delays[idx]
    w = net.weights[idx]
    if not isinstance(spec, Pool) or d is not None:
        x = _as_float(x, net.dtype)
    xd = apply_delay(x, d) if d is not None else x
    if isinstance(spec, Pool):
        z = pool_drive(xd, spec.kernel, w[0])
    elif isinstance(spec, Conv):
        z = conv_drive(xd, w, spec.pad)
    else:
        if xd.ndim != 2 or xd.shape[0] != w.shape[1]:
            raise ShapeError(f"dense weights {w.shape} do not match input {xd.shape}")
        z = w @ xd
    spikes, v_pre = cuba_run(z, p)
    if cache is not None:
        needs_response = is_trainable(spec) or d is not None
        response = psp(xd, p) if needs_response else None
        cache.layers.append(LayerCache(x, xd, response, v_pre, spikes))
    return spikes


def check_cache(net: Network, cache: ForwardCache):
    if cache is None or len(cache.layers) != len(net.layers):
        raise ConsistencyError("forward cache does not belong to this network")
    for idx, (lc, shape) in enumerate(zip(cache.layers, net.shapes[1:])):
        if lc.spikes.shape[:-1] != shape:
            raise ConsistencyError(f"layer {idx}: cached shape {lc.spikes.shape[:-1]} != network {shape}")
