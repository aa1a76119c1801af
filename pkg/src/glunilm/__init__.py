"""Convolutional sequence-to-sequence energy disaggregation with GLU blocks."""
from .data import APPLIANCES, ApplianceSpec, SeriesChannel, synth_household
from .estimator import Seq2SeqDisaggregator
from .network import Checkpoint, Network, NetworkConfig, build_network, load_checkpoint, save_checkpoint
from .training import TrainConfig, gradient_check, train
from .windowing import WindowPair, disaggregate, make_windows, overlap_average

__version__ = "0.1.0"

__all__ = [
    "APPLIANCES",
    "ApplianceSpec",
    "Checkpoint",
    "Network",
    "NetworkConfig",
    "Seq2SeqDisaggregator",
    "SeriesChannel",
    "TrainConfig",
    "WindowPair",
    "build_network",
    "disaggregate",
    "gradient_check",
    "load_checkpoint",
    "make_windows",
    "overlap_average",
    "save_checkpoint",
    "synth_household",
    "train",
]
