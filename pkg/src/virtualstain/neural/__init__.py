"""Differentiable tensor core, GAN architectures, losses and training."""

from .losses import ALPHA_ADV, LAMBDA_TV, loss_discriminator, loss_generator
from .nets import DESK, PAPER, PROFILES, Architecture, Discriminator, Generator
from .optim import AdamState, adam_step
from .tensor import Tensor, lrelu
from .train import (DESK_CONFIG, TISSUE_PROFILES, TrainConfig, TrainingDiverged, TrainResult, infer,
                    schedule_v, train)

__all__ = [
    "ALPHA_ADV", "LAMBDA_TV", "DESK", "PAPER", "PROFILES", "DESK_CONFIG", "TISSUE_PROFILES",
    "AdamState", "Architecture", "Discriminator", "Generator", "Tensor", "TrainConfig",
    "TrainResult", "TrainingDiverged", "adam_step", "infer", "loss_discriminator",
    "loss_generator", "lrelu", "schedule_v", "train",
]
