import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evsnn.errors import DomainError
from evsnn.events import parse_events_binary, write_events_binary
from evsnn.synth import (
    MANIFEST,
    SynthConfig,
    read_manifest,
    sample_config,
    split_dataset,
    synth_dataset,
    synth_generate,
    write_dataset,
)


def test_generator_deterministic():
    cfg = SynthConfig(resolution=32, duration=1.0, seed=5)
    a = write_events_binary(synth_generate(4, cfg))
    b = write_events_binary(synth_generate(4, cfg))
    assert a == b


def test_generator_empty_config():
    cfg = SynthConfig(resolution=16, signal_event_rate=0.0, noise_rate=0.0)
    assert len(synth_generate(2, cfg)) == 0


def test_generator_bad_class():
    with pytest.raises(DomainError):
        synth_generate(13, SynthConfig())


def test_classes_spatially_separated():
    cfg = SynthConfig(resolution=72, seed=0)
    a = synth_generate(0, cfg)
    b = synth_generate(6, cfg)
    assert abs(a.x.mean() - b.x.mean()) >= 0.1 * cfg.resolution


def test_every_class_distinct_direction():
    cfg = SynthConfig(resolution=72, seed=1, noise_rate=0.0)
    centre = (cfg.resolution - 1) / 2
    angles = []
    for c in range(13):
        s = synth_generate(c, cfg)
        angles.append(math.atan2(s.y.mean() - centre, s.x.mean() - centre) % (2 * math.pi))
    gaps = np.diff(sorted(angles) + [sorted(angles)[0] + 2 * math.pi])
    assert gaps.min() > math.radians(15)


def test_noise_free_count_poisson_bound():
    rate, dur = 2000.0, 1.5
    cfg = SynthConfig(resolution=48, duration=dur, signal_event_rate=rate, noise_rate=0.0, seed=3)
    n = len(synth_generate(7, cfg))
    mean = rate * dur
    assert abs(n - mean) <= 3 * math.sqrt(mean)


def test_noise_regimes_ordered():
    counts = {}
    for regime in ("bright", "moderate", "dark"):
        cfg = SynthConfig(resolution=64, signal_event_rate=0.0, noise_regime=regime)
        counts[regime] = len(synth_generate(0, cfg))
    assert counts["bright"] < counts["moderate"] < counts["dark"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 12), st.integers(0, 2**31), st.integers(8, 40))
def test_generator_pure_and_round_trips(c, seed, res):
    cfg = SynthConfig(resolution=res, duration=0.5, signal_event_rate=500.0, seed=seed)
    s = synth_generate(c, cfg)
    assert synth_generate(c, cfg) == s
    assert parse_events_binary(write_events_binary(s)) == s


def test_mixed_regime_cycles():
    base = SynthConfig()
    regimes = [sample_config(base, 0, i).noise_regime for i in range(6)]
    assert regimes == ["bright", "moderate", "dark"] * 2


# ---------------------------------------------------------------- split


def _labels(n_per_class):
    return [(f"s{c}_{i}", c) for c, n in enumerate(n_per_class) for i in range(n)]


def test_split_even_classes():
    train, test = split_dataset(_labels([10] * 13), 0.8, seed=0)
    assert (len(train), len(test)) == (104, 26)
    assert all(v == 8 for v in Counter(y for _, y in train).values())
    assert all(v == 2 for v in Counter(y for _, y in test).values())


def test_split_reference_size_floor():
    sizes = [96] * 12 + [87]  # 1239 samples
    train, test = split_dataset(_labels(sizes), 0.8, seed=1)
    assert len(train) + len(test) == 1239
    assert len(train) == 991  # floor(0.8 * 1239)


def test_split_deterministic_and_disjoint():
    data = _labels([7, 5, 3, 9])
    a = split_dataset(data, 0.75, seed=4)
    b = split_dataset(data, 0.75, seed=4)
    assert a == b
    names = [n for n, _ in a[0]] + [n for n, _ in a[1]]
    assert sorted(names) == sorted(n for n, _ in data)


def test_split_singleton_class_allowed():
    train, test = split_dataset(_labels([1, 4]), 0.5, seed=0)
    assert len(train) + len(test) == 5


def test_split_bad_fraction():
    with pytest.raises(DomainError):
        split_dataset(_labels([4]), 1.0, seed=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=13), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_stratified(sizes, frac, seed):
    data = _labels(sizes)
    train, test = split_dataset(data, frac, seed)
    n = len(data)
    assert len(train) + len(test) == n
    tr = Counter(y for _, y in train)
    te = Counter(y for _, y in test)
    for c, size in enumerate(sizes):
        if size >= 2:
            assert tr[c] >= 1 and te[c] >= 1
    if all(s >= 2 for s in sizes if s) and n:
        # the at-least-one-per-side rule can only move the total by a few samples
        assert abs(len(train) - math.floor(n * frac)) <= sum(1 for s in sizes if s)


# ---------------------------------------------------------------- dataset directories


def test_write_dataset_layout(tmp_path):
    entries = write_dataset(tmp_path / "d", 13, 2, SynthConfig(resolution=16, duration=0.2))
    assert len(entries) == 26
    files = sorted(p.name for p in (tmp_path / "d").iterdir())
    assert MANIFEST in files
    assert "12_1.ndme" in files
    lines = (tmp_path / "d" / MANIFEST).read_text().splitlines()
    assert lines[0] == "path,label"
    assert len(lines) == 27
    back = read_manifest(tmp_path / "d")
    assert [(p.name, y) for p, y in back] == [(p.name, y) for p, y in entries]


def test_write_dataset_zero_per_class(tmp_path):
    write_dataset(tmp_path, 13, 0, SynthConfig(resolution=8))
    assert (tmp_path / MANIFEST).read_text() == "path,label\n"


def test_dataset_in_memory_matches_files(tmp_path):
    base = SynthConfig(resolution=16, duration=0.3, seed=9)
    mem = synth_dataset(3, 2, base)
    entries = write_dataset(tmp_path, 3, 2, base)
    from evsnn.synth import load_streams

    assert load_streams(entries) == mem
