"""Run configuration: INI-style sections with reference defaults.

An empty file resolves to the 4-layer network on a 720x720 two-polarity
input with the reference neuron constants and training hyperparameters.
Example::

    [network]
    input_height = 72
    input_width = 72
    layers = pool 8, conv 16 5 2, flatten, dense 512, dense 13

    [training]
    epochs = 50
    bin_width = 0.02

    [data]
    dataset = data/synthetic
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .events import num_bins
from .layers import Conv, Dense, Flatten, Pool, shape_chain
from .neuron import CubaParams
from .synth import REGIMES, SynthConfig

SECTIONS = ("network", "neuron", "training", "data", "output")


@dataclass
class NetworkSection:
    input_channels: int = 2
    input_height: int = 720
    input_width: int = 720
    layers: str = "pool 8, conv 16 5 2, flatten, dense 512, dense 13"
    pool_weight: float = 1.0
    init_gain: float = 0.4
    delays: bool = False
    precision: str = "float32"


@dataclass
class NeuronSection:
    v_thr: float = 1.25
    current_decay: float = 0.25
    voltage_decay: float = 0.03
    tau_grad: float = 0.03
    scale_grad: float = 3.0
    true_rate: float = 0.2
    false_rate: float = 0.03


@dataclass
class TrainingSection:
    epochs: int = 200
    lr: float = 3e-3
    seed: int = 0
    sample_window: float = 2.0
    bin_width: float = 0.005
    train_fraction: float = 0.8
    train_delays: bool = False
    surrogate_width: float = 1.0  # multiplies tau_grad in the surrogate
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_accuracy: float = 0.0  # 0 disables early stopping


@dataclass
class DataSection:
    dataset: str = ""  # directory or manifest; empty means generate in memory
    synth_classes: int = 13
    synth_per_class: int = 20
    synth_resolution: int = 0  # 0 follows network.input_height
    synth_duration: float = 3.0
    synth_signal_rate: float = 3000.0
    synth_noise: str = "mixed"


@dataclass
class OutputSection:
    report: str = "report.json"
    checkpoint: str = "model.ndmc"


@dataclass
class RunConfig:
    network: NetworkSection = field(default_factory=NetworkSection)
    neuron: NeuronSection = field(default_factory=NeuronSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    data: DataSection = field(default_factory=DataSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    # ---- derived views

    def cuba_params(self) -> CubaParams:
        try:
            return CubaParams(**{f.name: getattr(self.neuron, f.name) for f in fields(NeuronSection)})
        except DomainError as exc:
            raise ConfigError(f"neuron: {exc}") from None

    def layer_specs(self):
        return parse_layers(self.network.layers, self.network.pool_weight)

    @property
    def timesteps(self) -> int:
        try:
            return num_bins(self.training.sample_window, self.training.bin_width)
        except DomainError as exc:
            raise ConfigError(f"training.sample_window/bin_width: {exc}") from None

    @property
    def input_shape(self):
        n = self.network
        return (n.input_channels, n.input_height, n.input_width, self.timesteps)

    @property
    def dtype(self):
        return np.dtype(self.network.precision)

    def synth_config(self, seed=None) -> SynthConfig:
        d = self.data
        return SynthConfig(
            resolution=d.synth_resolution or self.network.input_height,
            duration=d.synth_duration,
            signal_event_rate=d.synth_signal_rate,
            seed=self.training.seed if seed is None else seed,
        )

    def resolve_path(self, value) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    # ---- validation and serialisation

    def validate(self):
        n, t, d = self.network, self.training, self.data
        if n.precision not in ("float32", "float64"):
            raise ConfigError(f"network.precision: expected float32 or float64, got {n.precision!r}")
        if n.input_channels != 2:
            raise ConfigError("network.input_channels: event input has exactly 2 polarity channels")
        if n.input_height < 1 or n.input_width < 1:
            raise ConfigError("network.input_height/input_width: must be positive")
        if n.init_gain <= 0:
            raise ConfigError("network.init_gain: must be positive")
        self.cuba_params()
        try:
            chain = shape_chain(self.input_shape, self.layer_specs())
        except Exception as exc:  # shape errors carry the layer index
            raise ConfigError(f"network.layers: {exc}") from None
        if len(chain[-1]) != 1:
            raise ConfigError("network.layers: the last layer must be dense")
        if t.epochs < 0:
            raise ConfigError("training.epochs: must be >= 0")
        if t.lr <= 0:
            raise ConfigError("training.lr: must be positive")
        if not 0 < t.train_fraction < 1:
            raise ConfigError("training.train_fraction: must be in (0, 1)")
        if t.surrogate_width <= 0:
            raise ConfigError("training.surrogate_width: must be positive")
        if not 0 <= t.target_accuracy <= 1:
            raise ConfigError("training.target_accuracy: must be in [0, 1]")
        if t.train_delays and not n.delays:
            raise ConfigError("training.train_delays: requires network.delays = true")
        if d.dataset:
            path = self.resolve_path(d.dataset)
            if not path.exists():
                raise ConfigError(f"data.dataset: {path} does not exist")
        else:
            if not 0 < d.synth_classes <= chain[-1][0]:
                raise ConfigError("data.synth_classes: must be in 1..output units")
            if d.synth_resolution < 0:
                raise ConfigError("data.synth_resolution: must be >= 0")
            if d.synth_noise not in REGIMES + ("mixed",):
                raise ConfigError(f"data.synth_noise: expected one of {REGIMES + ('mixed',)}")
        return self

    def to_dict(self, include_output=True):
        out = {}
        for name in SECTIONS:
            if name == "output" and not include_output:
                continue
            sec = getattr(self, name)
            out[name] = {f.name: getattr(sec, f.name) for f in fields(sec)}
        return out

    def dumps(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for key, value in values.items():
                if isinstance(value, bool):
                    value = "true" if value else "false"
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)


def parse_layers(text: str, pool_weight: float = 1.0):
    """``"pool 8, conv 16 5 2, flatten, dense 512, dense 13"`` to layer specs."""
    specs = []
    for idx, item in enumerate(filter(None, (s.strip() for s in text.split(",")))):
        kind, *args = item.split()
        try:
            nums = [int(a) for a in args]
        except ValueError:
            raise ConfigError(f"network.layers[{idx}]: non-integer argument in {item!r}") from None
        kind = kind.lower()
        if kind == "pool" and len(nums) == 1:
            specs.append(Pool(nums[0], pool_weight))
        elif kind == "conv" and len(nums) in (2, 3):
            specs.append(Conv(*nums))
        elif kind == "flatten" and not nums:
            specs.append(Flatten())
        elif kind == "dense" and len(nums) == 1:
            specs.append(Dense(nums[0]))
        else:
            raise ConfigError(f"network.layers[{idx}]: cannot parse {item!r}")
    if not specs:
        raise ConfigError("network.layers: empty layer list")
    return specs


def _coerce(section, key, raw, target_type):
    try:
        if target_type is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw.strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {target_type.__name__}") from None


_TYPES = {"int": int, "float": float, "bool": bool, "str": str}


def apply_values(cfg: RunConfig, values: dict) -> RunConfig:
    """Set ``{"section.key": "text"}`` values on ``cfg``; unknown keys are errors."""
    for dotted, raw in values.items():
        if "." not in dotted:
            raise ConfigError(f"{dotted}: expected section.key")
        sec_name, key = dotted.split(".", 1)
        if sec_name not in SECTIONS:
            raise ConfigError(f"{dotted}: unknown section {sec_name!r}")
        sec = getattr(cfg, sec_name)
        known = {f.name: f for f in fields(sec)}
        if key not in known:
            raise ConfigError(f"{dotted}: unknown key")
        value = raw if not isinstance(raw, str) else _coerce(sec_name, key, raw, _TYPES[known[key].type])
        setattr(cfg, sec_name, replace(sec, **{key: value}))
    return cfg


def load_config(path=None, overrides=None) -> RunConfig:
    """Read an INI file (or nothing) and apply ``section.key`` overrides."""
    cfg = RunConfig()
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                values[f"{sec}.{key}"] = raw
        cfg.base_dir = path.parent.resolve()
    values.update(overrides or {})
    return apply_values(cfg, values)
