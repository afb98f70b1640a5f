"""Alternating least squares: exact block minimization over users, then items."""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path

import numpy as np

from .core import ConvergenceTrace, FactorModel, FlatVector, RatingsMatrix, SolverConfig, TraceRecord, unflatten
from .normal_equations import NormalEquation, assemble, solve_rows
from .objective import loss, normalized_grad_norm
from .parallel import BlockExecutor, save_snapshot

log = logging.getLogger(__name__)

__all__ = [
    "NormalEquation",
    "user_equation",
    "item_equation",
    "update_users",
    "update_items",
    "als_sweep",
    "als_solve",
    "initial_iterate",
]


def _rows(factors: np.ndarray, n: int, name: str) -> np.ndarray:
    # Accept either n_f x n (FactorModel layout) or n x n_f (solver layout).
    factors = np.asarray(factors, dtype=np.float64)
    if factors.ndim != 2:
        raise ValueError(f"{name} must be 2-D")
    if factors.shape[0] == n and factors.shape[1] != n:
        return np.ascontiguousarray(factors)
    if factors.shape[1] == n:
        return np.ascontiguousarray(factors.T)
    raise ValueError(f"{name} has shape {factors.shape}, expected {n} columns")


def user_equation(M: np.ndarray, R: RatingsMatrix, lam: float, i: int) -> NormalEquation:
    """``A_i, v_i`` for user ``i`` given item factors ``M`` (n_f x n_m)."""
    return assemble(R.user_indptr, R.user_items, R.user_ratings, _rows(M, R.n_m, "M"), lam, i)


def item_equation(U: np.ndarray, R: RatingsMatrix, lam: float, j: int) -> NormalEquation:
    return assemble(R.item_indptr, R.item_users, R.item_ratings, _rows(U, R.n_u, "U"), lam, j)


def update_users(M: np.ndarray, R: RatingsMatrix, lam: float, order: np.ndarray | None = None) -> np.ndarray:
    """New user factors (n_f x n_u) minimizing the loss for fixed ``M`` (n_f x n_m).

    ``order`` only changes the sequence in which columns are visited; each
    column's result does not depend on it.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    other = _rows(M, R.n_m, "M")
    out = np.empty((R.n_u, other.shape[1]))
    rows = np.arange(R.n_u, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    solve_rows(R.user_indptr, R.user_items, R.user_ratings, other, lam, rows, out, "user", R.user_ids)
    return out.T.copy()


def update_items(U: np.ndarray, R: RatingsMatrix, lam: float, order: np.ndarray | None = None) -> np.ndarray:
    """Mirror image of :func:`update_users`; returns n_f x n_m."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    other = _rows(U, R.n_u, "U")
    out = np.empty((R.n_m, other.shape[1]))
    rows = np.arange(R.n_m, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    solve_rows(R.item_indptr, R.item_users, R.item_ratings, other, lam, rows, out, "item", R.item_ids)
    return out.T.copy()


def als_sweep(x: FlatVector, R: RatingsMatrix, lam: float) -> FlatVector:
    """``P(x)``: users from ``x``'s items, then items from the new users."""
    U = update_users(x.items.T, R, lam)
    M = update_items(U, R, lam)
    return FlatVector(U.T, M.T)


def initial_iterate(R: RatingsMatrix, n_f: int, seed: int, lam: float) -> FlatVector:
    """Seeded starting point shared by both solvers.

    Item factors are uniform on [0, 1) scaled by 1/sqrt(n_f); user factors
    are the exact minimizers for those items.
    """
    rng = np.random.default_rng(seed)
    M = rng.random((n_f, R.n_m)) / math.sqrt(n_f)
    U = update_users(M, R, lam)
    return FlatVector(U.T, M.T)


class _Clock:
    """Wall clock that can pause around instrumentation."""

    def __init__(self):
        self._start = time.perf_counter()
        self._paused = 0.0

    def pause(self):
        return _Pause(self)

    def elapsed(self) -> float:
        return time.perf_counter() - self._start - self._paused


class _Pause:
    def __init__(self, clock: _Clock):
        self.clock = clock

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.clock._paused += time.perf_counter() - self.t0


class _NullPause:
    def __enter__(self):
        pass

    def __exit__(self, *exc):
        pass


def _snapshot(config: SolverConfig, tag: str, k: int, x: FlatVector, elapsed: float, final: bool = False) -> None:
    # The last iterate is always written so rank evaluation ends at the returned model.
    if not config.snapshot_every or not config.snapshot_dir or (k % config.snapshot_every and not final):
        return
    d = Path(config.snapshot_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_snapshot(
        d / f"{tag}-seed{config.seed}-iter{k:06d}.npz", unflatten(x), k, config.seed,
        elapsed, config.single_precision_storage,
    )


def als_solve(
    R: RatingsMatrix,
    config: SolverConfig,
    x0: FlatVector | None = None,
    executor: BlockExecutor | None = None,
) -> tuple[FactorModel, ConvergenceTrace]:
    """Plain ALS until ``||g||/N < tol`` or ``max_iters`` sweeps.

    The gradient is only needed for the stopping test; with
    ``config.paper_timing`` its cost (and that of the recorded loss) is
    left out of ``elapsed_seconds``.
    """
    ex = executor or BlockExecutor(R, config.n_blocks, config.n_workers)
    x = initial_iterate(R, config.n_f, config.seed, config.lam) if x0 is None else x0
    trace = ConvergenceTrace()
    clock = _Clock()
    untimed = clock.pause if config.paper_timing else _NullPause

    k = 0
    shuffled = 0
    while True:
        with untimed():
            gn = normalized_grad_norm(ex.gradient(x, config.lam))
        done = gn < config.tol
        stop = done or k >= config.max_iters
        if k % config.trace_every == 0 or stop:
            with clock.pause():
                f = loss(x, R, config.lam)
            trace.append(TraceRecord(k, f, gn, clock.elapsed(), 0, shuffled))
        _snapshot(config, "als", k, x, clock.elapsed(), stop)
        if stop:
            trace.converged = done
            break
        x, moved = ex.sweep(x, config.lam)
        shuffled += moved
        k += 1
    log.info("ALS stopped after %d iterations (converged=%s, grad=%.3e)", k, trace.converged, gn)
    return unflatten(x), trace
