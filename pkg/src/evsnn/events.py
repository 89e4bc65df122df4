"""Event streams: parsing, serialization, cropping and temporal binning.

Two on-disk formats are supported.

CSV, UTF-8, LF or CRLF line endings::

    # 1280 720
    t,x,y,p
    1000,5,7,1
    1004,6,7,0,3        <- optional fifth ``origin`` column, ignored

The ``# <width> <height>`` comment is only recognised on the first line and the
``t,x,y,p`` header is optional.

NDME binary, all little-endian::

    magic  b"NDME"
    u32    version (1)
    u16    width
    u16    height
    u64    count
    count * (u64 t, u16 x, u16 y, u8 p)      # 13 bytes per record, packed
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import BoundsError, DimensionError, DomainError, FormatError, ParseError, TruncationError

NDME_MAGIC = b"NDME"
NDME_VERSION = 1
_HEADER = struct.Struct("<4sIHHQ")
RECORD_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
assert RECORD_DTYPE.itemsize == 13

US_PER_S = 1_000_000


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int


class EventStream:
    """Time-ordered events on a ``width`` x ``height`` sensor.

    Stored column-wise as numpy arrays (``t`` in microseconds). Construction
    validates bounds and stably sorts by timestamp, so ties keep input order.
    """

    __slots__ = ("width", "height", "t", "x", "y", "p")

    def __init__(self, width, height, t=(), x=(), y=(), p=(), *, presorted=False):
        if width < 0 or height < 0:
            raise DimensionError(f"negative geometry {width}x{height}")
        self.width = int(width)
        self.height = int(height)
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        p = np.asarray(p, dtype=np.int64).reshape(-1)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise DimensionError("event columns have different lengths")
        _check_bounds(self.width, self.height, t, x, y, p)
        if not presorted and len(t) > 1 and np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            t, x, y, p = t[order], x[order], y[order], p[order]
        self.t, self.x, self.y = t, x, y
        self.p = p.astype(np.uint8)

    @classmethod
    def empty(cls, width, height):
        return cls(width, height)

    @classmethod
    def from_events(cls, width, height, events):
        events = list(events)
        return cls(
            width,
            height,
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
        )

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, p)

    def __getitem__(self, i) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self):
        return f"EventStream({self.width}x{self.height}, {len(self)} events)"

    @property
    def events(self):
        return list(self)

    @property
    def duration_us(self):
        return int(self.t[-1] - self.t[0]) if len(self) else 0

    def select(self, mask):
        return EventStream(
            self.width, self.height, self.t[mask], self.x[mask], self.y[mask], self.p[mask], presorted=True
        )


def _check_bounds(width, height, t, x, y, p):
    if len(t) == 0:
        return
    if t.min() < 0:
        raise BoundsError(f"negative timestamp {int(t.min())}")
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BoundsError(f"event {i} at (x={int(x[i])}, y={int(y[i])}) outside {width}x{height}")
    if ((p != 0) & (p != 1)).any():
        raise BoundsError("polarity must be 0 or 1")


# ---------------------------------------------------------------- CSV


def _parse_int(field, lineno, name):
    try:
        return int(field.strip())
    except ValueError:
        raise ParseError(f"{name} field {field.strip()!r} is not an integer", lineno) from None


def parse_events_csv(text, width=None, height=None):
    """Parse ``t,x,y,p[,origin]`` lines into an :class:`EventStream`.

    Geometry comes from ``width``/``height`` when given, otherwise from a
    ``# <width> <height>`` comment on the first line.
    """
    lines = text.splitlines()
    declared = None
    ts, xs, ys, ps = [], [], [], []
    seen_data = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if lineno == 1:
                parts = line[1:].split()
                if len(parts) == 2 and all(s.isdigit() for s in parts):
                    declared = (int(parts[0]), int(parts[1]))
            continue
        fields = line.split(",")
        if not seen_data:
            seen_data = True
            try:
                int(fields[0].strip())
            except ValueError:
                continue  # header row
        if len(fields) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(fields)}", lineno)
        t = _parse_int(fields[0], lineno, "t")
        x = _parse_int(fields[1], lineno, "x")
        y = _parse_int(fields[2], lineno, "y")
        p = _parse_int(fields[3], lineno, "p")
        if len(fields) == 5:
            _parse_int(fields[4], lineno, "origin")
        if p not in (0, 1):
            raise ParseError(f"polarity {p} not in {{0,1}}", lineno)
        if t < 0:
            raise ParseError(f"negative timestamp {t}", lineno)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)

    if width is None or height is None:
        if declared is None:
            if not ts:
                return EventStream.empty(width or 0, height or 0)
            raise ParseError("no sensor geometry: pass width/height or add a '# <width> <height>' first line")
        width = declared[0] if width is None else width
        height = declared[1] if height is None else height
    return EventStream(width, height, ts, xs, ys, ps)


def write_events_csv(stream: EventStream) -> str:
    rows = [f"# {stream.width} {stream.height}", "t,x,y,p"]
    rows.extend(f"{t},{x},{y},{p}" for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p))
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- NDME binary


def write_events_binary(stream: EventStream) -> bytes:
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise DimensionError(f"geometry {stream.width}x{stream.height} does not fit u16")
    rec = np.empty(len(stream), dtype=RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    header = _HEADER.pack(NDME_MAGIC, NDME_VERSION, stream.width, stream.height, len(stream))
    return header + rec.tobytes()


def parse_events_binary(data: bytes) -> EventStream:
    data = bytes(data)
    if len(data) < _HEADER.size:
        if not data.startswith(NDME_MAGIC[: len(data)]):
            raise FormatError("bad magic, not an NDME file")
        raise TruncationError("truncated NDME header", len(data))
    magic, version, width, height, count = _HEADER.unpack_from(data)
    if magic != NDME_MAGIC:
        raise FormatError(f"bad magic {magic!r}, not an NDME file")
    if version != NDME_VERSION:
        raise FormatError(f"unsupported NDME version {version}")
    body = data[_HEADER.size :]
    need = count * RECORD_DTYPE.itemsize
    if len(body) < need:
        full = len(body) // RECORD_DTYPE.itemsize
        raise TruncationError(f"record {full} of {count} truncated", _HEADER.size + full * RECORD_DTYPE.itemsize)
    if len(body) > need:
        raise FormatError(f"{len(body) - need} trailing bytes after {count} records")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
    t = rec["t"]
    if count and t.max() > np.iinfo(np.int64).max:
        raise FormatError("timestamp exceeds int64 range")
    t = t.astype(np.int64)
    if count > 1 and np.any(np.diff(t) < 0):
        raise FormatError("records are not sorted by timestamp")
    return EventStream(width, height, t, rec["x"], rec["y"], rec["p"], presorted=True)


def read_events(path) -> EventStream:
    """Load an event file, choosing the format from the file contents."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == NDME_MAGIC:
        return parse_events_binary(data)
    if path.suffix.lower() == ".ndme":
        return parse_events_binary(data)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither NDME nor UTF-8 CSV") from None
    return parse_events_csv(text)


def write_events(path, stream: EventStream):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        path.write_text(write_events_csv(stream), encoding="utf-8")
    else:
        path.write_bytes(write_events_binary(stream))


# ---------------------------------------------------------------- transforms


def crop_center(stream: EventStream, side: int) -> EventStream:
    """Keep the centred ``side`` x ``side`` window, re-indexed to its origin."""
    if side > stream.width or side > stream.height:
        raise DimensionError(f"crop side {side} exceeds sensor {stream.width}x{stream.height}")
    if side < 0:
        raise DimensionError(f"negative crop side {side}")
    ox = (stream.width - side) // 2
    oy = (stream.height - side) // 2
    keep = (stream.x >= ox) & (stream.x < ox + side) & (stream.y >= oy) & (stream.y < oy + side)
    return EventStream(
        side,
        side,
        stream.t[keep],
        stream.x[keep] - ox,
        stream.y[keep] - oy,
        stream.p[keep],
        presorted=True,
    )


@dataclass
class SpikeTensor:
    """Binary spike volume indexed ``(polarity, y, x, t)``."""

    values: np.ndarray

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @property
    def timesteps(self):
        return self.values.shape[3]

    @property
    def shape(self):
        return self.values.shape


def to_microseconds(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


def num_bins(sample_window: float, bin_width: float) -> int:
    if not (sample_window > 0 and bin_width > 0):
        raise DomainError("sample_window and bin_width must be positive")
    if bin_width > sample_window:
        raise DomainError(f"bin_width {bin_width} exceeds sample_window {sample_window}")
    bin_us = to_microseconds(bin_width)
    if bin_us < 1:
        raise DomainError(f"bin_width {bin_width} s is below one microsecond")
    return to_microseconds(sample_window) // bin_us


def bin_to_spike_tensor(stream: EventStream, sample_window: float, bin_width: float) -> SpikeTensor:
    """Quantize events into ``floor(window / bin)`` time bins.

    Several events landing in the same (polarity, y, x, bin) cell produce a
    single spike. Events at or after the end of the window are dropped.
    Durations are converted to whole microseconds before dividing.
    """
    steps = num_bins(sample_window, bin_width)
    bin_us = to_microseconds(bin_width)
    values = np.zeros((2, stream.height, stream.width, steps), dtype=np.uint8)
    b = stream.t // bin_us
    keep = b < steps
    values[stream.p[keep], stream.y[keep], stream.x[keep], b[keep]] = 1
    return SpikeTensor(values)


def stream_stats(stream: EventStream) -> dict:
    n = len(stream)
    duration_s = stream.duration_us / US_PER_S
    on = int(stream.p.sum()) if n else 0
    return {
        "width": stream.width,
        "height": stream.height,
        "events": n,
        "duration_s": duration_s,
        "on": on,
        "off": n - on,
        "events_per_s": (n / duration_s) if duration_s > 0 else math.nan,
    }
