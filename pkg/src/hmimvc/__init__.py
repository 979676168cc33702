"""Bi-view clustering that tolerates missing and unaligned views."""

from .data import (MultiViewDataset, PartitionMasks, load_dataset, make_synthetic, normalize,
                   observed_views, save_dataset, simulate_corruption)
from .evaluation import ClusterReport, acc, ari, cluster_and_score, hungarian, kmeans, nmi
from .inference import evaluate_recovery, impute_missing, realign, recover
from .model import ModelParams, init_params, load_params, save_params
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "MultiViewDataset", "PartitionMasks", "load_dataset", "make_synthetic", "normalize",
    "observed_views", "save_dataset", "simulate_corruption", "ClusterReport", "acc", "ari",
    "cluster_and_score", "hungarian", "kmeans", "nmi", "evaluate_recovery", "impute_missing",
    "realign", "recover", "ModelParams", "init_params", "load_params", "save_params",
    "TrainConfig", "train",
]
