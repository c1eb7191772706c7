"""Permutation-equivariant networks for learning hard-disc dynamics."""

__version__ = "0.1.0"

from .models import KINDS, Model, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .perm import PermLayer, PermLayerConfig
from .sim import DiscState, SimConfig, Trajectory, generate_trajectories, generate_trajectory
from .train import TrainConfig, build_dataset, evaluate, rollout, train

__all__ = [
    "KINDS", "Model", "ModelConfig", "build_model", "load_checkpoint", "save_checkpoint",
    "PermLayer", "PermLayerConfig", "DiscState", "SimConfig", "Trajectory",
    "generate_trajectories", "generate_trajectory", "TrainConfig", "build_dataset", "evaluate",
    "rollout", "train",
]
