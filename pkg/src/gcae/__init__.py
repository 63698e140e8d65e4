"""Gaussian channel autoencoder: a noisy autoencoder disentangled through discriminator-estimated conditional densities."""
from .autodiff import NumericFault, ShapeError, Tensor, no_grad
from .config import ConfigError, ExperimentConfig, load_config
from .model import GcaeModel, GcaeTrainer, LossMode, TrainingFault

__all__ = ["Tensor", "NumericFault", "ShapeError", "no_grad", "ExperimentConfig", "ConfigError",
           "load_config", "GcaeModel", "GcaeTrainer", "LossMode", "TrainingFault"]
