"""GPLVM models with hyperbolic latent spaces and graph-based regularization."""

from .config import GEOMETRIES, MODES, REGULARIZERS, TrainConfig
from .losses import distortion_loss, latent_distances, log_marginal, log_prior, stress_loss
from .model import (
    BackConstraint,
    GphlvmModel,
    VariationalState,
    back_constrain,
    bc_kernel,
    decode,
    encode_new,
    load_model,
    model_from_dict,
)
from .train import (
    elbo_terms,
    optimal_inducing,
    train,
    train_back_constrained,
    train_map,
    train_variational,
)

__all__ = [
    "GEOMETRIES",
    "MODES",
    "REGULARIZERS",
    "TrainConfig",
    "distortion_loss",
    "latent_distances",
    "log_marginal",
    "log_prior",
    "stress_loss",
    "BackConstraint",
    "GphlvmModel",
    "VariationalState",
    "back_constrain",
    "bc_kernel",
    "decode",
    "encode_new",
    "load_model",
    "model_from_dict",
    "elbo_terms",
    "optimal_inducing",
    "train",
    "train_back_constrained",
    "train_map",
    "train_variational",
]
