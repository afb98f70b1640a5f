"""ALS-accelerated nonlinear conjugate gradient (ALS-NCG).

The ALS sweep ``P`` acts as a nonlinear preconditioner: the search
direction is built from ``gbar = x - P(x)`` instead of the raw gradient,
and the conjugacy parameter is the preconditioned Polak-Ribiere form
``gbar_{k+1}.(g_{k+1} - g_k) / gbar_k.g_k``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

from .als import _Clock, _snapshot, initial_iterate
from .core import ConvergenceTrace, FactorModel, FlatVector, RatingsMatrix, SolverConfig, TraceRecord, axpby, dot, unflatten
from .linesearch import MaxBacktracksError, armijo_slope, backtracking_search, quartic_coefficients
from .objective import gradient, loss, normalized_grad_norm
from .parallel import BlockExecutor

log = logging.getLogger(__name__)

__all__ = ["NcgState", "loss", "gradient", "normalized_grad_norm", "beta_bar", "als_ncg_solve"]

_TINY_DENOM = 1e-30


@dataclass(frozen=True)
class NcgState:
    x: FlatVector
    g: FlatVector
    g_bar: FlatVector
    p: FlatVector
    k: int
    denom: float  # g_bar . g, reused as the next beta denominator
    x_bar: FlatVector  # P(x), kept for the fallback step
    p_is_restart: bool  # p == -g_bar exactly


def beta_bar(g_next: FlatVector, g_prev: FlatVector, gbar_next: FlatVector, gbar_prev: FlatVector) -> float:
    """Preconditioned Polak-Ribiere parameter; 0 when the ratio is degenerate."""
    return _beta(dot(gbar_next, axpby(1.0, g_next, -1.0, g_prev)), dot(gbar_prev, g_prev))


def _beta(num: float, denom: float) -> float:
    if abs(denom) < _TINY_DENOM:
        return 0.0
    b = num / denom
    return b if math.isfinite(b) else 0.0


def _state(x, x_bar, g, p, k, restart) -> NcgState:
    g_bar = axpby(1.0, x, -1.0, x_bar)
    if p is None:
        p = -g_bar
        restart = True
    return NcgState(x, g, g_bar, p, k, dot(g_bar, g), x_bar, restart)


def als_ncg_solve(
    R: RatingsMatrix,
    config: SolverConfig,
    x0: FlatVector | None = None,
    executor: BlockExecutor | None = None,
    beta_rule: Callable[[FlatVector, FlatVector, FlatVector, FlatVector], float] | None = None,
    step_rule: Callable[..., tuple[float, int]] | None = None,
) -> tuple[FactorModel, ConvergenceTrace]:
    """Run ALS-NCG from the seeded start (or ``x0``).

    ``beta_rule(g_next, g_prev, gbar_next, gbar_prev)`` and
    ``step_rule(Q, slope)`` override the conjugacy parameter and the step
    length; both exist for experiments and tests.

    Whenever ``g.p >= 0`` the direction is reset to ``-gbar``. If the line
    search fails, or ``-gbar`` is not a descent direction either, the
    iterate moves to ``P(x)`` (a plain ALS step) and the direction restarts.
    """
    lam = config.lam
    ex = executor or BlockExecutor(R, config.n_blocks, config.n_workers)
    if step_rule is None:
        def step_rule(Q, slope):
            return backtracking_search(Q, slope, config.alpha0, config.armijo_c, config.tau, config.max_backtracks)

    x = initial_iterate(R, config.n_f, config.seed, lam) if x0 is None else x0
    trace = ConvergenceTrace()
    clock = _Clock()
    line_shuffle = 2 * ex.T_m.cross_block_columns  # x and p item columns for the quartic
    grad_shuffle = ex.T_u.cross_block_columns + ex.T_m.cross_block_columns

    x_bar, shuffled = ex.sweep(x, lam)
    state = _state(x, x_bar, ex.gradient(x, lam), None, 0, True)
    shuffled += grad_shuffle
    backtracks, restarted = 0, False

    while True:
        k = state.k
        gn = normalized_grad_norm(state.g)
        done = gn < config.tol
        stop = done or k >= config.max_iters
        if k % config.trace_every == 0 or stop:
            with clock.pause():
                f = loss(state.x, R, lam)
            trace.append(TraceRecord(k, f, gn, clock.elapsed(), backtracks, shuffled, restarted))
        _snapshot(config, "als-ncg", k, state.x, clock.elapsed(), stop)
        if stop:
            trace.converged = done
            break

        p, p_is_restart = state.p, state.p_is_restart
        restart = False
        slope = armijo_slope(state.g, p)
        if not slope < 0:
            p, p_is_restart, restart = -state.g_bar, True, True
            slope = armijo_slope(state.g, p)

        backtracks = 0
        if slope < 0:
            Q = quartic_coefficients(state.x, p, R, lam)
            shuffled += line_shuffle
            try:
                alpha, backtracks = step_rule(Q, slope)
            except MaxBacktracksError as err:
                backtracks = err.backtracks
                alpha = None
        else:
            alpha = None
        if alpha is None:
            x_new, restart = state.x_bar, True
        elif alpha == 1.0 and p_is_restart:
            # x + (P(x) - x) is P(x) in exact arithmetic; skip the rounding.
            x_new = state.x_bar
        else:
            x_new = axpby(1.0, state.x, alpha, p)

        x_bar_new, moved = ex.sweep(x_new, lam)
        g_new = ex.gradient(x_new, lam)
        shuffled += moved + grad_shuffle
        g_bar_new = axpby(1.0, x_new, -1.0, x_bar_new)
        if restart:
            beta = 0.0
        elif beta_rule is not None:
            beta = beta_rule(g_new, state.g, g_bar_new, state.g_bar)
        else:
            beta = _beta(dot(g_bar_new, axpby(1.0, g_new, -1.0, state.g)), state.denom)
        if beta == 0.0:
            p_new, p_restart = -g_bar_new, True
        else:
            p_new, p_restart = axpby(-1.0, g_bar_new, beta, p), False
        state = NcgState(x_new, g_new, g_bar_new, p_new, k + 1, dot(g_bar_new, g_new), x_bar_new, p_restart)
        restarted = restart

    log.info("ALS-NCG stopped after %d iterations (converged=%s, grad=%.3e)", state.k, trace.converged, gn)
    return unflatten(state.x), trace
