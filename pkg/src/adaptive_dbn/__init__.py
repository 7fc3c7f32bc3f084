"""Adaptive structural learning of Deep Belief Networks with KL-guided child re-learning."""

from .data import LabeledDataset, LabeledSample, load_csv, load_idx, make_overlap_fixture, save_csv, split
from .dbn import AdaptiveDBN, SoftmaxHead, TrainLog, load_model, save_model
from .exceptions import DataError, DegeneratePartitionError
from .metrics import ClassReport, ConfusionMatrix, class_report, confusion, kl_histogram
from .rbm import AdaptiveRBM, WalkingDistance
from .relearn import (
    KlReport,
    RelearnPlan,
    build_plan,
    export_scatter,
    kl_divergence,
    partition_by_threshold,
    relearn_sweep,
    train_child,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptiveDBN",
    "AdaptiveRBM",
    "ClassReport",
    "ConfusionMatrix",
    "DataError",
    "DegeneratePartitionError",
    "KlReport",
    "LabeledDataset",
    "LabeledSample",
    "RelearnPlan",
    "SoftmaxHead",
    "TrainLog",
    "WalkingDistance",
    "build_plan",
    "class_report",
    "confusion",
    "export_scatter",
    "kl_divergence",
    "kl_histogram",
    "load_csv",
    "load_idx",
    "load_model",
    "make_overlap_fixture",
    "partition_by_threshold",
    "relearn_sweep",
    "save_csv",
    "save_model",
    "split",
    "train_child",
]
