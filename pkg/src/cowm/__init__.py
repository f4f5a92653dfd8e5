"""Clustering orthogonal weight modification (COWM) layers and toy benchmarks."""

from .clustering import ClusterModel, nearest_center, spherical_kmeans
from .layer import CowmLayer, DirectionBuffer, LinearLayer
from .network import Mlp, TrainConfig, gaussian_logprob_grad, mse_loss

__version__ = "0.1.0"

__all__ = [
    "ClusterModel",
    "CowmLayer",
    "DirectionBuffer",
    "LinearLayer",
    "Mlp",
    "TrainConfig",
    "gaussian_logprob_grad",
    "mse_loss",
    "nearest_center",
    "spherical_kmeans",
]
