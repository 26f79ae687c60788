"""Trainable scoring heads: parameters, objectives, optimizer and training."""

from .checkpoint import load_checkpoint, save_checkpoint, write_loss_trace
from .gradcheck import GradCheckReport, finite_diff_check
from .losses import (
    OBJECTIVES,
    OE_OBJECTIVES,
    autoencoder_loss_grad,
    bce_loss_grad,
    center_distance,
    compactness_loss_grad,
    deepsad_loss_grad,
    hsc_loss_grad,
    hsc_radius,
    objective_loss_grad,
    reconstruction_error,
)
from .mlp import DenseLayer, MlpParams, backward, forward, head_dims, identity_params, init_mlp
from .optim import SgdState, clip_gradients, sgd_step
from .trainer import ModelConfig, TrainConfig, TrainingPools, TrainResult, compute_center, train

__all__ = [
    "OBJECTIVES",
    "OE_OBJECTIVES",
    "DenseLayer",
    "MlpParams",
    "init_mlp",
    "identity_params",
    "forward",
    "backward",
    "head_dims",
    "bce_loss_grad",
    "hsc_loss_grad",
    "hsc_radius",
    "deepsad_loss_grad",
    "compactness_loss_grad",
    "autoencoder_loss_grad",
    "center_distance",
    "reconstruction_error",
    "objective_loss_grad",
    "SgdState",
    "clip_gradients",
    "sgd_step",
    "GradCheckReport",
    "finite_diff_check",
    "TrainConfig",
    "ModelConfig",
    "TrainingPools",
    "TrainResult",
    "compute_center",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_trace",
]
