"""Trainable denoiser: network, loss, training loop, checkpoints."""

from .checkpoint import Checkpoint, TrainerState, load_checkpoint, save_checkpoint
from .loss import LossWeights, loss, loss_with_output_grads
from .net import (
    Network,
    NetworkArch,
    backward,
    block_table,
    expected_param_count,
    forward,
    init_network,
)
from .train import (
    Adam,
    TrainConfig,
    denoise_frame,
    denoise_mask,
    finite_difference_check,
    gradients,
    median_denoise,
    train_curriculum,
    train_single_stage,
)

__all__ = [
    "Adam",
    "Checkpoint",
    "LossWeights",
    "Network",
    "NetworkArch",
    "TrainConfig",
    "TrainerState",
    "backward",
    "block_table",
    "denoise_frame",
    "denoise_mask",
    "expected_param_count",
    "finite_difference_check",
    "forward",
    "gradients",
    "init_network",
    "load_checkpoint",
    "loss",
    "loss_with_output_grads",
    "median_denoise",
    "save_checkpoint",
    "train_curriculum",
    "train_single_stage",
]
