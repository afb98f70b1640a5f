"""Backtracking line search on the exact quartic restriction of the loss.

Along ``x + alpha p`` every residual ``r_ij - u_i . m_j`` is quadratic in
``alpha``, so the loss is a quartic. One pass over the ratings yields its
five coefficients, after which each trial step costs a handful of flops.
"""

from __future__ import annotations

from . import _kernels
from .core import FlatVector, QuarticPoly, RatingsMatrix, dot


class LineSearchError(RuntimeError):
    pass


class NotDescentError(LineSearchError):
    def __init__(self, slope: float):
        super().__init__(f"search direction is not a descent direction (slope={slope!r})")
        self.slope = slope


class MaxBacktracksError(LineSearchError):
    def __init__(self, alpha: float, backtracks: int):
        super().__init__(f"Armijo condition unmet after {backtracks} backtracks (alpha={alpha!r})")
        self.alpha = alpha
        self.backtracks = backtracks


def quartic_coefficients(x: FlatVector, p: FlatVector, R: RatingsMatrix, lam: float) -> QuarticPoly:
    """Coefficients of ``Q(alpha) = loss(x + alpha p)``.

    Per rating, with ``a = r - xu.xm``, ``b = xu.pm + pu.xm`` and
    ``d = pu.pm`` the residual is ``a - b alpha - d alpha**2``; its square
    contributes ``(a^2, -2ab, b^2 - 2ad, 2bd, d^2)``. Each column's penalty
    adds ``lam n (|x|^2, 2 x.p, |p|^2)`` to the first three.
    """
    x._check(p)
    if x.n_u != R.n_u or x.n_m != R.n_m:
        raise ValueError("vectors do not match the ratings matrix")
    c = _kernels.quartic(
        R.user_indptr, R.user_items, R.user_ratings,
        x.users, p.users, x.items, p.items,
        R.user_counts, R.item_counts, float(lam),
    )
    return QuarticPoly(tuple(c))


def armijo_slope(g: FlatVector, p: FlatVector) -> float:
    """Directional derivative ``g . p``."""
    return dot(g, p)


def backtracking_search(
    Q: QuarticPoly,
    slope: float,
    alpha0: float = 10.0,
    c: float = 0.5,
    tau: float = 0.9,
    max_backtracks: int = 100,
) -> tuple[float, int]:
    """First ``alpha0 * tau**k`` meeting ``Q(a) - Q(0) <= a c slope``.

    Returns ``(alpha, k)``. Raises :class:`NotDescentError` if
    ``slope >= 0`` and :class:`MaxBacktracksError` when ``max_backtracks``
    shrinks are not enough.
    """
    if not slope < 0:
        raise NotDescentError(slope)
    if not alpha0 > 0:
        raise ValueError("alpha0 must be > 0")
    alpha = alpha0
    for k in range(max_backtracks + 1):
        if Q.increment(alpha) <= alpha * c * slope:
            return alpha, k
        if k < max_backtracks:
            alpha *= tau
    raise MaxBacktracksError(alpha, max_backtracks)
