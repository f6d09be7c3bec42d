"""EEG auditory spatial-attention decoding: a from-scratch CNN engine,
synthetic-data generator, preprocessing pipeline, and analysis suite."""

__version__ = "0.1.0"

from .data import EpochedDataset, relative_label
from .engine import Network, NetworkSpec, param_count
from .models import build_attloc, build_mtm, build_relloc, evaluate, train

__all__ = [
    "EpochedDataset",
    "Network",
    "NetworkSpec",
    "build_attloc",
    "build_mtm",
    "build_relloc",
    "evaluate",
    "param_count",
    "relative_label",
    "train",
]
