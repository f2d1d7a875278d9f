"""Compact relative depth estimation: synthetic data, ordinal losses,
distillation, loss rebalancing and a small encoder/decoder network."""

__version__ = "0.1.0"

from .datagen import Scene, SceneSpec, derive_pairs, gen_scene, gen_scenes, read_dataset, write_dataset
from .distill import CachedTeacher, DistillConfig, OracleTeacher, distill_loss, oracle_teacher
from .estimator import RelativeDepthEstimator
from .exceptions import (
    ConfigError,
    DegenerateSceneError,
    FormatError,
    NonFiniteLossError,
    SparseDepthError,
    UndefinedMetricError,
    UnknownImageError,
)
from .losses import (
    AuxWeights,
    KDWeights,
    SICompositeConfig,
    aux_combine,
    improved_ranking_loss,
    pairwise_affinity_loss,
    pixelwise_distill_loss,
    ranking_loss,
    si_composite_loss,
)
from .metrics import MetricConfig, delta_acc, rmse, si_rmse, whdr
from .model import ModelConfig, build_model, count_params, load_checkpoint, save_checkpoint, strip_heads
from .pairs import OrdinalPair
from .rebalance import Rebalancer, init_rebalancer, rebalance_step, schedule_positions
from .train import DepthDataset, TrainConfig, TrainLog, evaluate, train, train_sequential

__all__ = [
    "Scene", "SceneSpec", "derive_pairs", "gen_scene", "gen_scenes", "read_dataset", "write_dataset",
    "CachedTeacher", "DistillConfig", "OracleTeacher", "distill_loss", "oracle_teacher",
    "RelativeDepthEstimator",
    "ConfigError", "DegenerateSceneError", "FormatError", "NonFiniteLossError", "SparseDepthError",
    "UndefinedMetricError", "UnknownImageError",
    "AuxWeights", "KDWeights", "SICompositeConfig", "aux_combine", "improved_ranking_loss",
    "pairwise_affinity_loss", "pixelwise_distill_loss", "ranking_loss", "si_composite_loss",
    "MetricConfig", "delta_acc", "rmse", "si_rmse", "whdr",
    "ModelConfig", "build_model", "count_params", "load_checkpoint", "save_checkpoint", "strip_heads",
    "OrdinalPair",
    "Rebalancer", "init_rebalancer", "rebalance_step", "schedule_positions",
    "DepthDataset", "TrainConfig", "TrainLog", "evaluate", "train", "train_sequential",
]
