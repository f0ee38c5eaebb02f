"""Neural-ODE surrogate for the mixed-spin 2RDM dynamics."""

from .field import ACTIVATIONS, NonFiniteError, VectorField
from .checks import directional_gradient_check
from .losses import LossWeights, PhysicalMap, eig_penalty, loss_mse, total_loss, trace_penalty
from .solver import IntegrationError, SolverConfig, dopri5, integrate, rk4
from .training import (
    NodeModel,
    Prediction,
    SearchResult,
    TrainConfig,
    TrainResult,
    fit,
    hyperparameter_search,
    predict,
    train,
)

__all__ = [
    "directional_gradient_check", "ACTIVATIONS", "NonFiniteError", "VectorField", "LossWeights", "PhysicalMap", "eig_penalty",
    "loss_mse", "total_loss", "trace_penalty", "IntegrationError", "SolverConfig", "dopri5",
    "integrate", "rk4", "NodeModel", "Prediction", "SearchResult", "TrainConfig", "TrainResult",
    "fit", "hyperparameter_search", "predict", "train",
]
