"""Synthetic 13-class motion recordings and dataset bookkeeping.

Each class is a Gaussian blob travelling outward from near the sensor centre
along its own direction (13 evenly spaced headings). Events on the leading
side of the blob are ON, trailing ones OFF. Uniform background noise is laid
on top, with a rate set by the lighting regime.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError
from .events import US_PER_S, EventStream, read_events, write_events

NUM_CLASSES = 13

# background events per pixel per second
NOISE_RATES = {"bright": 0.02, "moderate": 0.05, "dark": 0.1}
REGIMES = tuple(NOISE_RATES)


@dataclass(frozen=True)
class SynthConfig:
    resolution: int = 72
    duration: float = 3.0
    class_count: int = NUM_CLASSES
    noise_regime: str = "moderate"
    signal_event_rate: float = 3000.0
    seed: int = 0
    noise_rate: float | None = None  # whole-sensor events/s; overrides the regime when set

    def __post_init__(self):
        if self.class_count != NUM_CLASSES:
            raise DomainError(f"class_count must be {NUM_CLASSES}")
        if self.noise_regime not in NOISE_RATES:
            raise DomainError(f"noise_regime must be one of {REGIMES}")
        if self.resolution < 1 or self.duration < 0 or self.signal_event_rate < 0:
            raise DomainError("resolution, duration and signal_event_rate must be non-negative")

    @property
    def background_rate(self) -> float:
        if self.noise_rate is not None:
            return float(self.noise_rate)
        return NOISE_RATES[self.noise_regime] * self.resolution**2


def class_heading(class_id: int) -> float:
    return 2.0 * math.pi * class_id / NUM_CLASSES


def synth_generate(class_id: int, cfg: SynthConfig) -> EventStream:
    if not 0 <= class_id < NUM_CLASSES:
        raise DomainError(f"class_id {class_id} outside 0..{NUM_CLASSES - 1}")
    rng = np.random.default_rng([cfg.seed, class_id])
    res = cfg.resolution
    dur_us = int(round(cfg.duration * US_PER_S))
    centre = (res - 1) / 2.0

    # per-sample jitter of heading, reach and blob size
    heading = class_heading(class_id) + rng.normal(0.0, math.radians(3.0))
    r_start = res * (0.08 + rng.uniform(-0.01, 0.01))
    r_end = res * (0.36 + rng.uniform(-0.02, 0.02))
    sigma = res * 0.04 * rng.uniform(0.9, 1.1)
    direction = np.array([math.cos(heading), math.sin(heading)])

    n_sig = rng.poisson(cfg.signal_event_rate * cfg.duration) if dur_us > 0 else 0
    t_sig = rng.integers(0, max(dur_us, 1), size=n_sig)
    progress = t_sig / max(dur_us, 1)
    radius = r_start + (r_end - r_start) * progress
    offset = rng.normal(0.0, sigma, size=(n_sig, 2))
    px = centre + radius * direction[0] + offset[:, 0]
    py = centre + radius * direction[1] + offset[:, 1]
    p_sig = (offset @ direction >= 0).astype(np.int64)

    n_bg = rng.poisson(cfg.background_rate * cfg.duration) if dur_us > 0 else 0
    t_bg = rng.integers(0, max(dur_us, 1), size=n_bg)
    x_bg = rng.integers(0, res, size=n_bg)
    y_bg = rng.integers(0, res, size=n_bg)
    p_bg = rng.integers(0, 2, size=n_bg)

    x = np.concatenate([np.clip(np.rint(px), 0, res - 1).astype(np.int64), x_bg])
    y = np.concatenate([np.clip(np.rint(py), 0, res - 1).astype(np.int64), y_bg])
    t = np.concatenate([t_sig, t_bg])
    p = np.concatenate([p_sig, p_bg])
    return EventStream(res, res, t, x, y, p)


def sample_seed(base_seed: int, class_id: int, sample_id: int) -> int:
    return int(np.random.SeedSequence([base_seed, class_id, sample_id]).generate_state(1)[0])


def sample_config(base: SynthConfig, class_id: int, sample_id: int, regime: str = "mixed") -> SynthConfig:
    """Config for one dataset sample; ``mixed`` cycles through the lighting regimes."""
    if regime == "mixed":
        regime = REGIMES[sample_id % len(REGIMES)]
    return replace(base, seed=sample_seed(base.seed, class_id, sample_id), noise_regime=regime)


def synth_dataset(classes, per_class: int, base: SynthConfig, regime: str = "mixed"):
    """In-memory list of ``(stream, label)`` pairs, class-major order."""
    return [
        (synth_generate(c, sample_config(base, c, i, regime)), c)
        for c in range(classes)
        for i in range(per_class)
    ]


def split_dataset(samples, train_fraction: float, seed: int):
    """Stratified, seeded train/test partition of ``(item, label)`` pairs.

    The train size is ``floor(N * train_fraction)``, apportioned over classes
    by largest remainder; every class with at least two samples keeps at least
    one sample on each side. Both partitions come back in shuffled order.
    """
    if not 0 < train_fraction < 1:
        raise DomainError(f"train_fraction must be in (0, 1), got {train_fraction}")
    samples = list(samples)
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for idx, (_, label) in enumerate(samples):
        by_class.setdefault(int(label), []).append(idx)
    labels = sorted(by_class)

    total = len(samples)
    target = math.floor(round(total * train_fraction, 9))
    quota = {}
    remainder = {}
    for c in labels:
        exact = round(len(by_class[c]) * train_fraction, 9)
        quota[c] = math.floor(exact)
        remainder[c] = exact - quota[c]
    for c in sorted(labels, key=lambda c: (-remainder[c], c)):
        if sum(quota.values()) >= target:
            break
        quota[c] += 1
    for c in labels:
        n = len(by_class[c])
        if n >= 2:
            quota[c] = min(max(quota[c], 1), n - 1)

    train_idx, test_idx = [], []
    for c in labels:
        idx = np.array(by_class[c])
        rng.shuffle(idx)
        train_idx.extend(idx[: quota[c]].tolist())
        test_idx.extend(idx[quota[c] :].tolist())
    train_idx = np.array(train_idx, dtype=np.int64)
    test_idx = np.array(test_idx, dtype=np.int64)
    rng.shuffle(train_idx)
    rng.shuffle(test_idx)
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


# ---------------------------------------------------------------- dataset directories

MANIFEST = "manifest.csv"


def write_manifest(path, entries):
    """Write ``path,label`` rows; paths are stored relative to the manifest."""
    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label"])
        for sample_path, label in entries:
            rel = os.path.relpath(Path(sample_path).resolve(), base)
            writer.writerow([Path(rel).as_posix(), int(label)])


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0] == "path"):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 'path,label'")
            try:
                label = int(row[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
            entries.append((path.parent / row[0], label))
    return entries


def write_dataset(out_dir, classes: int, per_class: int, base: SynthConfig, regime: str = "mixed"):
    """Generate ``<class>_<id>.ndme`` files plus ``manifest.csv``; returns the entries."""
    if not 0 < classes <= NUM_CLASSES:
        raise DomainError(f"classes must be in 1..{NUM_CLASSES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in range(classes):
        for i in range(per_class):
            stream = synth_generate(c, sample_config(base, c, i, regime))
            path = out_dir / f"{c}_{i}.ndme"
            write_events(path, stream)
            entries.append((path, c))
    write_manifest(out_dir / MANIFEST, entries)
    return entries


def load_streams(entries):
    return [(read_events(p), label) for p, label in entries]
