"""Event-camera classification with current-based LIF spiking networks."""

from .checkpoint import Binning, load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .events import EventStream, SpikeTensor, bin_to_spike_tensor, read_events, write_events
from .layers import Conv, Dense, Flatten, Network, Pool, network_forward
from .neuron import CubaParams, cuba_run, surrogate_pdf
from .training import FitConfig, backward, evaluate, fit, predict

__all__ = [
    "Binning",
    "Conv",
    "CubaParams",
    "Dense",
    "EventStream",
    "FitConfig",
    "Flatten",
    "Network",
    "Pool",
    "RunConfig",
    "SpikeTensor",
    "backward",
    "bin_to_spike_tensor",
    "cuba_run",
    "evaluate",
    "fit",
    "load_checkpoint",
    "load_config",
    "network_forward",
    "predict",
    "read_events",
    "save_checkpoint",
    "surrogate_pdf",
    "write_events",
]
