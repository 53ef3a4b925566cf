"""Multi-task pedestrian action, intent and trajectory network."""
from .config import LossWeights, TrainConfig, VRUNetConfig, format_config_text, parse_config_text
from .losses import action_loss, class_weights, total_loss, traj_loss
from .model import Batch, PredictionBundle, VRUNet, make_batch, mean_mask, scene_flatten_size
from .smooth import smooth_batch, smooth_trajectory
from .train import (TrainingDiverged, TrainResult, evaluate, load_model, load_training_state, predict,
                    save_model, save_training_state, train,
                    trajectories_px)

__all__ = [
    "LossWeights", "TrainConfig", "VRUNetConfig", "format_config_text", "parse_config_text", "action_loss",
    "class_weights", "total_loss", "traj_loss", "Batch", "PredictionBundle", "VRUNet", "make_batch", "mean_mask",
    "scene_flatten_size", "smooth_batch", "smooth_trajectory", "TrainingDiverged", "TrainResult", "evaluate",
    "load_model", "load_training_state", "predict", "save_model", "save_training_state", "train", "trajectories_px",
]
