"""Online metro origin-destination ridership forecasting at desk scale.

Pipeline: synthetic transaction simulation -> streaming snapshot aggregation
(incomplete OD, unfinished orders, DO) -> dual-branch graph-recurrent
forecaster with cross-branch attention -> MAPE evaluation against a
historical-average baseline.
"""

from .aggregation import (
    CompressionMaps,
    DatasetSplits,
    IntervalSnapshot,
    SampleSet,
    SnapshotSample,
    build_compression_maps,
    build_dataset,
    build_snapshot,
    compute_dd_long,
    compute_dd_short,
    estimate_uod,
)
from .estimators import HistoricalAverageForecaster, RidershipForecaster
from .evaluation import evaluate, network_mape, split_group_mape
from .model import Forecaster, ModelConfig
from .simulate import SimConfig, TransactionLog, commuting_time_cdf, generate_log
from .topology import MetroGraph, build_graph, load_graph, save_graph
from .training import NormStats, TrainConfig, fit_norm_stats, mae_loss, train

__version__ = "0.1.0"

__all__ = [
    "CompressionMaps",
    "DatasetSplits",
    "Forecaster",
    "HistoricalAverageForecaster",
    "IntervalSnapshot",
    "MetroGraph",
    "ModelConfig",
    "NormStats",
    "RidershipForecaster",
    "SampleSet",
    "SimConfig",
    "SnapshotSample",
    "TrainConfig",
    "TransactionLog",
    "build_compression_maps",
    "build_dataset",
    "build_graph",
    "build_snapshot",
    "commuting_time_cdf",
    "compute_dd_long",
    "compute_dd_short",
    "estimate_uod",
    "evaluate",
    "fit_norm_stats",
    "generate_log",
    "load_graph",
    "mae_loss",
    "network_mape",
    "save_graph",
    "split_group_mape",
    "train",
]
