"""Per-column regularized normal equations and their solution."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalEquation:
    """``A x = v`` for one user or item column."""

    A: np.ndarray
    v: np.ndarray

    def solve(self) -> np.ndarray:
        return least_norm_solve(self.A, self.v)


def assemble(indptr, indices, values, other: np.ndarray, lam: float, row: int) -> NormalEquation:
    """Build the system for ``row`` by rank-1 accumulation in sorted index order."""
    lo, hi = indptr[row], indptr[row + 1]
    nf = other.shape[1]
    A = np.zeros((nf, nf))
    v = np.zeros(nf)
    for k in range(lo, hi):
        o = other[indices[k]]
        A += np.outer(o, o)
        v += values[k] * o
    A += lam * (hi - lo) * np.eye(nf)
    return NormalEquation(A, v)


def least_norm_solve(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    # v lies in range(A) for these systems, so lstsq gives the min-norm exact solution.
    x, *_ = np.linalg.lstsq(A, v, rcond=None)
    return x


def solve_rows(
    indptr: np.ndarray,
    indices: np.ndarray,
    values: np.ndarray,
    other: np.ndarray,
    lam: float,
    rows: np.ndarray,
    out: np.ndarray,
    kind: str = "user",
    labels: np.ndarray | None = None,
) -> int:
    """Solve every row in ``rows`` into ``out``; returns the number of fallbacks.

    Cholesky is tried first. Systems it rejects (possible only when
    ``lam * count == 0`` and the neighbouring factors are rank deficient)
    are re-solved by a least-norm solve.
    """
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    status = np.zeros(rows.size, dtype=np.int8)
    _kernels.solve_rows(indptr, indices, values, other, float(lam), rows, out, status)
    failed = rows[status != 0]
    for i in failed:
        eq = assemble(indptr, indices, values, other, lam, int(i))
        out[i] = eq.solve()
        label = int(labels[i]) if labels is not None else int(i)
        log.warning("Cholesky failed for %s %d; used least-norm solve", kind, label)
    return int(failed.size)
