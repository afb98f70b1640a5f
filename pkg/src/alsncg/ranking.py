"""Top-t ranking agreement between two factor models.

The distance between two rankings is the number of adjacent swaps needed
to move each of the reference's top ``t`` items, in rank order, into the
same position of the other ranking, keeping items already placed fixed.
It is normalized by the worst case ``t (2 n - t - 1) / 2`` and reported as
an accuracy ``q = 1 - s / s_max``.
"""

from __future__ import annotations

import numpy as np

from .core import FactorModel

DEFAULT_T = 20


def rank_items(model: FactorModel, user: int) -> np.ndarray:
    """Item ids by descending predicted rating; ties go to the smaller id."""
    if not 0 <= user < model.n_u:
        raise IndexError(f"user {user} out of range [0, {model.n_u})")
    scores = model.U[:, user] @ model.M
    return np.lexsort((np.arange(model.n_m), -scores))


def rank_all(model: FactorModel) -> np.ndarray:
    """``rank_items`` for every user, one row per user."""
    return np.stack([rank_items(model, i) for i in range(model.n_u)]) if model.n_u else np.empty((0, model.n_m), np.int64)


def _check_perm(p: np.ndarray, n: int, name: str) -> None:
    if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
        raise ValueError(f"{name} is not a permutation of 0..{n - 1}")


def max_swaps(n: int, t: int) -> int:
    return t * (2 * n - t - 1) // 2


def swap_count(p1, p2, t: int) -> int:
    """Adjacent swaps needed to bring ``p1``'s top ``t`` into place in ``p2``."""
    work = list(p2)
    pos = {item: k for k, item in enumerate(work)}
    s = 0
    for k in range(t):
        item = p1[k]
        at = pos[item]
        s += at - k
        # rotate work[k:at+1] right by one so ``item`` lands at k
        moved = work[k:at]
        work[k + 1 : at + 1] = moved
        work[k] = item
        for offset, other in enumerate(moved, start=k + 1):
            pos[other] = offset
        pos[item] = k
    return s


def ranking_accuracy(p1, p2, t: int = DEFAULT_T, labels: bool = False) -> float:
    """``q = 1 - s / s_max`` for the top ``t`` of reference ranking ``p1``.

    With ``labels=True`` the rankings may use arbitrary item labels (for
    example 1-based ids) as long as both hold the same set.
    """
    p1 = np.asarray(p1)
    p2 = np.asarray(p2)
    n = p1.size
    if labels:
        if p2.shape != p1.shape or set(p1.tolist()) != set(p2.tolist()) or len(set(p1.tolist())) != n:
            raise ValueError("rankings must order the same distinct items")
        code = {item: k for k, item in enumerate(p1.tolist())}
        p1 = np.arange(n)
        p2 = np.array([code[v] for v in p2.tolist()])
    _check_perm(p1, n, "p1")
    _check_perm(p2, n, "p2")
    if not 1 <= t <= n:
        raise ValueError(f"t={t} outside [1, {n}]")
    if n == 1:
        return 1.0
    return 1.0 - swap_count(p1.tolist(), p2.tolist(), t) / max_swaps(n, t)


def mean_ranking_accuracy(model_at_k: FactorModel, model_final: FactorModel, t: int = DEFAULT_T) -> float:
    """Average ``q`` over users, with ``model_final``'s ranking as reference."""
    if (model_at_k.n_u, model_at_k.n_m) != (model_final.n_u, model_final.n_m):
        raise ValueError("models cover different users/items")
    ref = rank_all(model_final)
    cur = rank_all(model_at_k)
    n = model_final.n_m
    if not 1 <= t <= n:
        raise ValueError(f"t={t} outside [1, {n}]")
    if n == 1:
        return 1.0
    smax = max_swaps(n, t)
    total = sum(swap_count(a, b, t) for a, b in zip(ref.tolist(), cur.tolist()))
    return 1.0 - total / (smax * model_final.n_u)
