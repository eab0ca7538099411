"""Deeply supervised multitask 3D autoencoder for brain-age regression."""

from .ensemble import EnsembleWeights, ensemble_predict, fit_ensemble_weights, search_weights
from .estimator import DSMTAERegressor
from .exceptions import (
    CompatibilityError,
    ConfigurationError,
    DegenerateTargetError,
    DSMTError,
    FormatError,
    MetadataError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .losses import LossWeights, compute_losses, total_loss
from .model import DSMTAENet, ModelConfig, Variant, build_model
from .trainer import TrainConfig, TrainState, VolumeArrays, gradient_check, grid_search, train

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError",
    "ConfigurationError",
    "DSMTAENet",
    "DSMTAERegressor",
    "DSMTError",
    "DegenerateTargetError",
    "EnsembleWeights",
    "FormatError",
    "LossWeights",
    "MetadataError",
    "ModelConfig",
    "ParameterError",
    "ShapeError",
    "TrainConfig",
    "TrainState",
    "TrainingError",
    "Variant",
    "VolumeArrays",
    "build_model",
    "compute_losses",
    "ensemble_predict",
    "fit_ensemble_weights",
    "gradient_check",
    "grid_search",
    "search_weights",
    "total_loss",
    "train",
]
