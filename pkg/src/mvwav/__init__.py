"""Sparse interpolatory-wavelet regularization of manifold-valued signals."""

from .manifolds import CIRCLE, SPD, SPHERE, Euclidean, get_manifold
from .means import grad_through_mean, intrinsic_mean, mean_derivative

__all__ = [
    "CIRCLE",
    "SPHERE",
    "SPD",
    "Euclidean",
    "get_manifold",
    "intrinsic_mean",
    "mean_derivative",
    "grad_through_mean",
]

__version__ = "0.1.0"
