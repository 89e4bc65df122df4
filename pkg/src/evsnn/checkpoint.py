"""NDMC network checkpoints.

Layout, all little-endian::

    magic        b"NDMC"
    u32          version (1)
    u32          layer count L
    u32 x 4      input shape (C, H, W, T)
    f64, f64     sample_window, bin_width (seconds)
    u32          crop side (0 = no crop)
    L x layer:
      u8         tag: 0 pool, 1 conv, 2 flatten, 3 dense
      u32 x n    shape integers: pool (kernel), conv (out, in, kernel, padding),
                 flatten (), dense (out, in)
      f32 x 7    neuron parameters: v_thr, current_decay, voltage_decay,
                 tau_grad, scale_grad, true_rate, false_rate
      u64, f32*  weight count then weights, row-major (pool: the fixed pool weight)
      u64, f32*  delay count then delays (0 when delays are disabled)

Neuron parameters are read back as the shortest decimal that round-trips
through float32, so table values such as 0.03 come back exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError, TruncationError
from .layers import Conv, Dense, Flatten, Network, Pool
from .neuron import CubaParams

NDMC_MAGIC = b"NDMC"
NDMC_VERSION = 1
_TAGS = {Pool: 0, Conv: 1, Flatten: 2, Dense: 3}


@dataclass(frozen=True)
class Binning:
    sample_window: float = 2.0
    bin_width: float = 0.005
    crop_side: int = 0


def _f32_decimal(x):
    return float(str(np.float32(x)))


def write_checkpoint(net: Network, binning: Binning = Binning()) -> bytes:
    out = [struct.pack("<4sII", NDMC_MAGIC, NDMC_VERSION, len(net.layers))]
    out.append(struct.pack("<4I", *net.input_shape))
    out.append(struct.pack("<ddI", binning.sample_window, binning.bin_width, binning.crop_side))
    for idx, spec in enumerate(net.layers):
        in_shape = net.shapes[idx]
        out.append(struct.pack("<B", _TAGS[type(spec)]))
        if isinstance(spec, Pool):
            dims = (spec.kernel,)
        elif isinstance(spec, Conv):
            dims = (spec.out_channels, in_shape[0], spec.kernel, spec.pad)
        elif isinstance(spec, Dense):
            dims = (spec.out_units, in_shape[0])
        else:
            dims = ()
        out.append(struct.pack(f"<{len(dims)}I", *dims))
        out.append(np.asarray(net.layer_params(idx).astuple(), dtype="<f4").tobytes())
        for arr in (net.weights[idx], net.delays[idx]):
            arr = np.zeros(0) if arr is None else arr
            out.append(struct.pack("<Q", arr.size))
            out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise TruncationError("truncated NDMC checkpoint", self.pos)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def floats(self, count):
        size = 4 * count
        if self.pos + size > len(self.data):
            raise TruncationError("truncated NDMC array", self.pos)
        arr = np.frombuffer(self.data, dtype="<f4", count=count, offset=self.pos).copy()
        self.pos += size
        return arr


def read_checkpoint(data: bytes, dtype=np.float32):
    """Parse checkpoint bytes into ``(network, binning)``."""
    r = _Reader(bytes(data))
    magic, version, n_layers = r.take("<4sII")
    if magic != NDMC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, not an NDMC checkpoint")
    if version != NDMC_VERSION:
        raise FormatError(f"unsupported NDMC version {version}")
    input_shape = r.take("<4I")
    sample_window, bin_width, crop_side = r.take("<ddI")
    layers, weights, delays, params = [], [], [], []
    for idx in range(n_layers):
        (tag,) = r.take("<B")
        if tag == 0:
            (kernel,) = r.take("<I")
            spec_args = ("pool", kernel)
        elif tag == 1:
            spec_args = ("conv",) + r.take("<4I")
        elif tag == 2:
            spec_args = ("flatten",)
        elif tag == 3:
            spec_args = ("dense",) + r.take("<2I")
        else:
            raise FormatError(f"layer {idx}: unknown layer tag {tag}")
        p = CubaParams(*(_f32_decimal(v) for v in r.floats(7)))
        (n_w,) = r.take("<Q")
        w = r.floats(n_w)
        (n_d,) = r.take("<Q")
        d = r.floats(n_d) if n_d else None
        kind = spec_args[0]
        if kind == "pool":
            spec = Pool(spec_args[1], weight=_f32_decimal(w[0]) if n_w else 1.0, params=p)
            w = w.reshape(1)
        elif kind == "conv":
            out_ch, in_ch, k, pad = spec_args[1:]
            spec = Conv(out_ch, k, pad, params=p)
            w = _reshape(w, (out_ch, in_ch, k, k), idx)
        elif kind == "dense":
            out_u, in_u = spec_args[1:]
            spec = Dense(out_u, params=p)
            w = _reshape(w, (out_u, in_u), idx)
        else:
            spec = Flatten(params=p)
        layers.append(spec)
        weights.append(w)
        delays.append(d)
        params.append(p)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes in checkpoint")
    # the most common per-layer parameter set becomes the network default
    default = max(params, key=params.count) if params else CubaParams()
    layers = [_strip_params(spec, default) for spec in layers]
    try:
        net = Network(input_shape, layers, weights, delays if any(d is not None for d in delays) else None, default, dtype)
    except (ShapeError, DomainError) as exc:
        raise FormatError(f"inconsistent checkpoint: {exc}") from None
    return net, Binning(sample_window, bin_width, crop_side)


def _reshape(w, shape, idx):
    if w.size != int(np.prod(shape)):
        raise FormatError(f"layer {idx}: {w.size} weights stored, shape {shape} needs {int(np.prod(shape))}")
    return w.reshape(shape)


def _strip_params(spec, default):
    if spec.params == default:
        return type(spec)(**{**spec.__dict__, "params": None})
    return spec


def save_checkpoint(path, net: Network, binning: Binning = Binning()):
    Path(path).write_bytes(write_checkpoint(net, binning))


def load_checkpoint(path, dtype=np.float32):
    return read_checkpoint(Path(path).read_bytes(), dtype)
