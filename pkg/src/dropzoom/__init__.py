"""Hyperparameter landscapes over (hidden units, dropout rate) and surrogate-guided zoom search."""

from .harness import SimulatedEvaluator, TrialRecord, load_ledger, run_trials
from .nn import MlpConfig, TrainConfig, train
from .sampler import HyperPoint, SearchSpace
from .zoom import ZoomConfig, zoom_search

__version__ = "0.1.0"

__all__ = [
    "HyperPoint",
    "MlpConfig",
    "SearchSpace",
    "SimulatedEvaluator",
    "TrainConfig",
    "TrialRecord",
    "ZoomConfig",
    "load_ledger",
    "run_trials",
    "train",
    "zoom_search",
]
