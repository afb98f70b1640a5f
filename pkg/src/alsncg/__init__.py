"""Matrix factorization for collaborative filtering with ALS and ALS-NCG."""

from .core import (
    ConvergenceTrace,
    FactorModel,
    FlatVector,
    QuarticPoly,
    RatingsMatrix,
    SolverConfig,
    TraceRecord,
    axpby,
    dot,
    flatten,
    norm,
    unflatten,
)
from .als import als_solve, als_sweep, update_items, update_users
from .ncg import als_ncg_solve, beta_bar, gradient, loss, normalized_grad_norm

__version__ = "0.1.0"

__all__ = [
    "ConvergenceTrace",
    "FactorModel",
    "FlatVector",
    "QuarticPoly",
    "RatingsMatrix",
    "SolverConfig",
    "TraceRecord",
    "axpby",
    "dot",
    "flatten",
    "norm",
    "unflatten",
    "als_solve",
    "als_sweep",
    "update_items",
    "update_users",
    "als_ncg_solve",
    "beta_bar",
    "gradient",
    "loss",
    "normalized_grad_norm",
]
