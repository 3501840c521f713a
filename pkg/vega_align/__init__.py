"""
vega-align - Spatial grounding alignment for vision-action policies

Trains a small vision transformer policy whose intermediate patch tokens
are pulled toward a frozen, 3D-aware teacher encoder through a
train-time projector and a cosine alignment loss. At inference the
projector is dropped and the policy runs unchanged.

Usage:
    from vega_align import TrainConfig, build_dataset, train

    config = TrainConfig(steps=200, align_lambda=0.1)
    train_data = build_dataset(config.data, config.encoder, "train")
    result = train(config, train_data, teacher=teacher)
    result.metrics.write_csv("metrics.csv")

Command line:
    vega-align gen-data --out runs
    vega-align train-teacher --data runs/data --out runs
    vega-align train --data runs/data --teacher runs/teacher.vegc --out runs/vega
"""

from __future__ import annotations

from .alignment import ProjectorParams, align_loss, init_projector, project, vega_loss
from .analysis import Clustering, PcaResult, ari, kmeans, pairwise_ari_matrix, pca, pca_to_rgb
from .checkpoint import Checkpoint, CheckpointKind, load_checkpoint, save_checkpoint
from .config import (
    AlignmentConfig,
    DataConfig,
    Difficulty,
    EncoderConfig,
    Fit3dConfig,
    StudentInit,
    TrainConfig,
)
from .dataset import SceneDataset, build_dataset, load_dataset, write_dataset
from .encoder import EncoderParams, PatchTokenMap, encode, init_encoder
from .errors import (
    AlignmentError,
    CameraError,
    CheckpointError,
    ConfigurationError,
    DatasetError,
    ProbeError,
    ShapeError,
    TrainingError,
    VegaError,
)
from .fit3d import consistency_score, fit3d_finetune
from .metrics_log import MetricsLog
from .model import InferenceModel, VegaModel, strip_projector
from .policy_head import Action, success_proxy
from .trainer import VegaTrainer, evaluate, train

__version__ = "0.1.0"
__all__ = [
    "Action",
    "AlignmentConfig",
    "AlignmentError",
    "CameraError",
    "Checkpoint",
    "CheckpointError",
    "CheckpointKind",
    "Clustering",
    "ConfigurationError",
    "DataConfig",
    "DatasetError",
    "Difficulty",
    "EncoderConfig",
    "EncoderParams",
    "Fit3dConfig",
    "InferenceModel",
    "MetricsLog",
    "PatchTokenMap",
    "PcaResult",
    "ProbeError",
    "ProjectorParams",
    "SceneDataset",
    "ShapeError",
    "StudentInit",
    "TrainConfig",
    "TrainingError",
    "VegaError",
    "VegaModel",
    "VegaTrainer",
    "align_loss",
    "ari",
    "build_dataset",
    "consistency_score",
    "encode",
    "evaluate",
    "fit3d_finetune",
    "init_encoder",
    "init_projector",
    "kmeans",
    "load_checkpoint",
    "load_dataset",
    "pairwise_ari_matrix",
    "pca",
    "pca_to_rgb",
    "project",
    "save_checkpoint",
    "strip_projector",
    "success_proxy",
    "train",
    "vega_loss",
    "write_dataset",
]
