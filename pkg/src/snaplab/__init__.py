"""Shaped noise augmented processing for robustness to a union of perturbation norms."""
from . import analysis, attacks, checkpoint, config, data, models, noise, tensor, training
from .errors import (
    ConfigError, ContractError, DegenerateUpdateError, DimensionError, FormatError, NumericError,
    SnapError,
)
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateUpdateError", "DimensionError", "FormatError",
    "NumericError", "Rng", "SnapError", "analysis", "attacks", "checkpoint", "config", "data",
    "models", "noise", "tensor", "training",
]
