"""Microgrid generator-power forecasting toolkit.

From-scratch CNN-GRU-Attention forecasting network with explicit
backpropagation, a training protocol with plateau lr reduction and
early stopping, classical baselines, full metric reporting, and
Shapley feature attribution, all behind a reproducible CLI.
"""

from .data import SCHEMA, SupervisedSet, Table, label_zero_state, load_csv, make_windows, split_and_scale, synth_generate
from .network import Network, NetworkConfig
from .tensor import RngState
from .train import TrainConfig, TrainLog, fit

__version__ = "0.1.0"

__all__ = [
    "SCHEMA",
    "SupervisedSet",
    "Table",
    "Network",
    "NetworkConfig",
    "RngState",
    "TrainConfig",
    "TrainLog",
    "fit",
    "label_zero_state",
    "load_csv",
    "make_windows",
    "split_and_scale",
    "synth_generate",
    "__version__",
]
