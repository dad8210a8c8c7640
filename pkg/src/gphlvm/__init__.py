"""Gaussian-process latent variable models with hyperbolic latent spaces."""

from .errors import (
    CapabilityError,
    CompatibilityError,
    DataIOError,
    DimensionError,
    DomainError,
    GphlvmError,
    NumericalError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "GphlvmError",
    "ValidationError",
    "DimensionError",
    "DomainError",
    "CapabilityError",
    "CompatibilityError",
    "NumericalError",
    "DataIOError",
]
