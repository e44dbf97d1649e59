"""Adaptive (generalized linear) pooling for small numpy convolutional networks."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .estimator import AdaptivePoolingClassifier
from .layers import PoolingMatrix, l1_project, mean_pool_as_matrix
from .network import NetworkSpec, preset
from .trainer import TrainingConfig, init_network, swap_pooling, train

__all__ = [
    "AdaptivePoolingClassifier",
    "Checkpoint",
    "NetworkSpec",
    "PoolingMatrix",
    "TrainingConfig",
    "init_network",
    "l1_project",
    "load_checkpoint",
    "mean_pool_as_matrix",
    "preset",
    "save_checkpoint",
    "swap_pooling",
    "train",
]
