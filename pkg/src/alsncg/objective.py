"""Regularized squared loss and its gradient."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .core import FlatVector, RatingsMatrix, norm


def _check(x: FlatVector, R: RatingsMatrix) -> None:
    if x.n_u != R.n_u or x.n_m != R.n_m:
        raise ValueError(f"vector shaped for {x.n_u}x{x.n_m}, ratings are {R.n_u}x{R.n_m}")


def loss(x: FlatVector, R: RatingsMatrix, lam: float) -> float:
    """Sum of squared residuals plus count-weighted Tikhonov penalty.

    Residuals are accumulated user by user in sorted item order.
    """
    _check(x, R)
    return float(
        _kernels.loss(
            R.user_indptr, R.user_items, R.user_ratings,
            x.users, x.items, R.user_counts, R.item_counts, float(lam),
        )
    )


def user_gradient(x: FlatVector, R: RatingsMatrix, lam: float, rows: np.ndarray | None = None) -> np.ndarray:
    out = np.zeros_like(x.users)
    if rows is None:
        rows = np.arange(R.n_u, dtype=np.int64)
    _kernels.gradient_rows(R.user_indptr, R.user_items, R.user_ratings, x.users, x.items, float(lam), rows, out)
    return out


def item_gradient(x: FlatVector, R: RatingsMatrix, lam: float, rows: np.ndarray | None = None) -> np.ndarray:
    out = np.zeros_like(x.items)
    if rows is None:
        rows = np.arange(R.n_m, dtype=np.int64)
    _kernels.gradient_rows(R.item_indptr, R.item_users, R.item_ratings, x.items, x.users, float(lam), rows, out)
    return out


def gradient(x: FlatVector, R: RatingsMatrix, lam: float) -> FlatVector:
    """Full gradient: a user-major pass, then an item-major pass."""
    _check(x, R)
    return FlatVector(user_gradient(x, R, lam), item_gradient(x, R, lam))


def normalized_grad_norm(g: FlatVector) -> float:
    """``||g|| / N`` with ``N = n_f (n_u + n_m)``."""
    return norm(g) / g.size
