"""Shared domain types: ratings storage, factor matrices, flat vectors, config."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Iterator, Sequence

import numpy as np

from . import _kernels


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingsMatrix:
    """Known ratings held twice, once grouped by user and once by item.

    Both views are CSR layouts with column indices sorted inside each row.
    ``user_ids``/``item_ids`` map dense indices back to original labels
    (identity when the matrix was not built from external data).
    """

    n_u: int
    n_m: int
    user_indptr: np.ndarray
    user_items: np.ndarray
    user_ratings: np.ndarray
    item_indptr: np.ndarray
    item_users: np.ndarray
    item_ratings: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    @classmethod
    def from_triples(
        cls,
        n_u: int,
        n_m: int,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        ratings: Sequence[float] | np.ndarray,
        user_ids: np.ndarray | None = None,
        item_ids: np.ndarray | None = None,
    ) -> "RatingsMatrix":
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        ratings = np.asarray(ratings, dtype=np.float64).ravel()
        if not (users.size == items.size == ratings.size):
            raise ValueError("users, items and ratings must have equal length")
        if users.size:
            if users.min() < 0 or users.max() >= n_u:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= n_m:
                raise ValueError("item index out of range")
        if not np.all(np.isfinite(ratings)):
            raise ValueError("ratings must be finite")

        by_user = np.lexsort((items, users))
        u_s, i_s = users[by_user], items[by_user]
        dup = (np.diff(u_s) == 0) & (np.diff(i_s) == 0)
        if np.any(dup):
            k = int(np.flatnonzero(dup)[0])
            raise ValueError(f"duplicate rating for user {u_s[k]}, item {i_s[k]}")
        by_item = np.lexsort((users, items))

        user_indptr = np.zeros(n_u + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=n_u), out=user_indptr[1:])
        item_indptr = np.zeros(n_m + 1, dtype=np.int64)
        np.cumsum(np.bincount(items, minlength=n_m), out=item_indptr[1:])

        if user_ids is None:
            user_ids = np.arange(n_u, dtype=np.int64)
        if item_ids is None:
            item_ids = np.arange(n_m, dtype=np.int64)
        user_ids = np.asarray(user_ids, dtype=np.int64)
        item_ids = np.asarray(item_ids, dtype=np.int64)
        if user_ids.shape != (n_u,) or item_ids.shape != (n_m,):
            raise ValueError("id maps must match matrix dimensions")

        return cls(
            n_u=int(n_u),
            n_m=int(n_m),
            user_indptr=_frozen(user_indptr),
            user_items=_frozen(np.ascontiguousarray(i_s)),
            user_ratings=_frozen(np.ascontiguousarray(ratings[by_user])),
            item_indptr=_frozen(item_indptr),
            item_users=_frozen(np.ascontiguousarray(users[by_item])),
            item_ratings=_frozen(np.ascontiguousarray(ratings[by_item])),
            user_ids=_frozen(user_ids.copy()),
            item_ids=_frozen(item_ids.copy()),
        )

    @classmethod
    def from_dense(cls, dense: np.ndarray, mask: np.ndarray | None = None) -> "RatingsMatrix":
        """Build from a dense array; ``mask`` selects known entries (default: all finite)."""
        dense = np.asarray(dense, dtype=np.float64)
        if mask is None:
            mask = np.isfinite(dense)
        rows, cols = np.nonzero(mask)
        return cls.from_triples(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols])

    @property
    def nnz(self) -> int:
        return int(self.user_items.size)

    @property
    def user_counts(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @property
    def item_counts(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    @property
    def empty_users(self) -> np.ndarray:
        """Indices of users with no ratings (kept in the shape, factors forced to zero)."""
        return np.flatnonzero(self.user_counts == 0)

    @property
    def empty_items(self) -> np.ndarray:
        return np.flatnonzero(self.item_counts == 0)

    def by_user(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.user_indptr[i], self.user_indptr[i + 1]
        return list(zip(self.user_items[lo:hi].tolist(), self.user_ratings[lo:hi].tolist()))

    def by_item(self, j: int) -> list[tuple[int, float]]:
        lo, hi = self.item_indptr[j], self.item_indptr[j + 1]
        return list(zip(self.item_users[lo:hi].tolist(), self.item_ratings[lo:hi].tolist()))

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(users, items, ratings)`` in user-major sorted order."""
        users = np.repeat(np.arange(self.n_u, dtype=np.int64), self.user_counts)
        return users, self.user_items.copy(), self.user_ratings.copy()

    def to_dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full((self.n_u, self.n_m), fill)
        u, i, r = self.triples()
        out[u, i] = r
        return out

    def check_consistency(self) -> None:
        """Raise AssertionError unless both views hold the identical triple set."""
        u1, i1, r1 = self.triples()
        i2 = np.repeat(np.arange(self.n_m, dtype=np.int64), self.item_counts)
        order = np.lexsort((i2, self.item_users))
        assert np.array_equal(u1, self.item_users[order])
        assert np.array_equal(i1, i2[order])
        assert np.array_equal(r1, self.item_ratings[order])
        assert self.user_counts.sum() == self.item_counts.sum() == self.nnz
        assert np.all(np.isfinite(r1))


@dataclass(frozen=True, eq=False)
class FactorModel:
    """User factors ``U`` (n_f x n_u) and item factors ``M`` (n_f x n_m)."""

    U: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        if self.U.ndim != 2 or self.M.ndim != 2 or self.U.shape[0] != self.M.shape[0]:
            raise ValueError("U and M must be 2-D with the same number of rows")

    @property
    def n_f(self) -> int:
        return self.U.shape[0]

    @property
    def n_u(self) -> int:
        return self.U.shape[1]

    @property
    def n_m(self) -> int:
        return self.M.shape[1]

    def predict(self, user: int, item: int) -> float:
        return float(self.U[:, user] @ self.M[:, item])


@dataclass(frozen=True, eq=False)
class FlatVector:
    """The concatenated vector ``[u_1, ..., u_{n_u}, m_1, ..., m_{n_m}]``.

    Kept as two row-major segments, ``users`` (n_u x n_f) and ``items``
    (n_m x n_f), so that ``users.ravel()`` is exactly the user part of the
    logical layout. Arrays are made read-only on construction.
    """

    users: np.ndarray
    items: np.ndarray

    def __post_init__(self):
        if self.users.ndim != 2 or self.items.ndim != 2 or self.users.shape[1] != self.items.shape[1]:
            raise ValueError("segments must be 2-D with equal factor rank")
        object.__setattr__(self, "users", _frozen(np.ascontiguousarray(self.users, dtype=np.float64)))
        object.__setattr__(self, "items", _frozen(np.ascontiguousarray(self.items, dtype=np.float64)))

    @property
    def n_f(self) -> int:
        return self.users.shape[1]

    @property
    def n_u(self) -> int:
        return self.users.shape[0]

    @property
    def n_m(self) -> int:
        return self.items.shape[0]

    @property
    def size(self) -> int:
        return self.n_f * (self.n_u + self.n_m)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.n_f, self.n_u, self.n_m

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.users.ravel(), self.items.ravel()])

    @classmethod
    def from_array(cls, a: np.ndarray, n_f: int, n_u: int, n_m: int) -> "FlatVector":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (n_f * (n_u + n_m),):
            raise ValueError(f"expected length {n_f * (n_u + n_m)}, got {a.shape}")
        k = n_f * n_u
        return cls(a[:k].reshape(n_u, n_f).copy(), a[k:].reshape(n_m, n_f).copy())

    @classmethod
    def zeros(cls, n_f: int, n_u: int, n_m: int) -> "FlatVector":
        return cls(np.zeros((n_u, n_f)), np.zeros((n_m, n_f)))

    def _check(self, other: "FlatVector") -> None:
        if self.shape != other.shape:
            raise ValueError(f"dimension mismatch: {self.shape} vs {other.shape}")

    def __add__(self, other: "FlatVector") -> "FlatVector":
        return axpby(1.0, self, 1.0, other)

    def __sub__(self, other: "FlatVector") -> "FlatVector":
        return axpby(1.0, self, -1.0, other)

    def __neg__(self) -> "FlatVector":
        return FlatVector(-self.users, -self.items)

    def __mul__(self, a: float) -> "FlatVector":
        return FlatVector(a * self.users, a * self.items)

    __rmul__ = __mul__

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.users)) and np.all(np.isfinite(self.items)))


def flatten(model: FactorModel) -> FlatVector:
    return FlatVector(model.U.T.copy(), model.M.T.copy())


def unflatten(x: FlatVector) -> FactorModel:
    return FactorModel(x.users.T.copy(), x.items.T.copy())


def axpby(a: float, x: FlatVector, b: float, y: FlatVector) -> FlatVector:
    """Return ``a*x + b*y`` as a new vector."""
    x._check(y)
    return FlatVector(a * x.users + b * y.users, a * x.items + b * y.items)


def dot(x: FlatVector, y: FlatVector) -> float:
    """Euclidean inner product, accumulated with compensated summation."""
    x._check(y)
    return float(_kernels.dot2(x.users.ravel(), y.users.ravel(), x.items.ravel(), y.items.ravel()))


def norm(x: FlatVector) -> float:
    return math.sqrt(dot(x, x))


@dataclass
class SolverConfig:
    lam: float = 0.1
    n_f: int = 10
    max_iters: int = 10_000
    tol: float = 1e-6
    seed: int = 0
    alpha0: float = 10.0
    armijo_c: float = 0.5
    tau: float = 0.9
    max_backtracks: int = 100
    n_blocks: int | None = None
    n_workers: int = 1
    trace_every: int = 1
    snapshot_every: int = 0
    snapshot_dir: str | None = None
    paper_timing: bool = False
    single_precision_storage: bool = False

    def __post_init__(self):
        if self.n_blocks is None:
            self.n_blocks = self.n_workers
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.n_f < 1:
            raise ValueError("rank must be >= 1")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be > 0")
        if self.n_blocks < 1 or self.n_workers < 1:
            raise ValueError("n_blocks and n_workers must be >= 1")
        if self.max_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration caps must be >= 0")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


TRACE_COLUMNS = ("iter", "loss", "grad_norm", "elapsed_s", "backtracks", "shuffled_columns")


def format_float(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    loss: float
    grad_norm: float
    elapsed_seconds: float
    backtracks_used: int = 0
    shuffled_columns: int = 0
    restart: bool = False


@dataclass
class ConvergenceTrace:
    records: list[TraceRecord] = field(default_factory=list)
    converged: bool = False

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.iter <= last.iter:
                raise ValueError("trace iterations must be strictly increasing")
            if rec.elapsed_seconds < last.elapsed_seconds:
                raise ValueError("elapsed time must be non-decreasing")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, k: int) -> TraceRecord:
        return self.records[k]

    @property
    def iters(self) -> np.ndarray:
        return np.array([r.iter for r in self.records], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([r.grad_norm for r in self.records])

    @property
    def elapsed(self) -> np.ndarray:
        return np.array([r.elapsed_seconds for r in self.records])

    @property
    def final_iter(self) -> int:
        return self.records[-1].iter if self.records else 0

    def mean_iteration_time(self) -> float:
        """Average seconds per iteration over the whole run."""
        if len(self.records) < 2 or self.final_iter == self.records[0].iter:
            return float("nan")
        return (self.records[-1].elapsed_seconds - self.records[0].elapsed_seconds) / (
            self.final_iter - self.records[0].iter
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow(
                [
                    r.iter,
                    format_float(r.loss),
                    format_float(r.grad_norm),
                    format_float(r.elapsed_seconds),
                    r.backtracks_used,
                    r.shuffled_columns,
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceTrace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError("not a trace file: bad header")
        trace = cls()
        for row in rows[1:]:
            if not row:
                continue
            trace.append(
                TraceRecord(
                    iter=int(row[0]),
                    loss=float(row[1]),
                    grad_norm=float(row[2]),
                    elapsed_seconds=float(row[3]),
                    backtracks_used=int(row[4]),
                    shuffled_columns=int(row[5]),
                )
            )
        return trace


@dataclass(frozen=True)
class QuarticPoly:
    """``Q(alpha) = c[0] + c[1] alpha + ... + c[4] alpha**4``."""

    c: tuple[float, float, float, float, float]

    def __post_init__(self):
        c = tuple(float(v) for v in self.c)
        if len(c) != 5:
            raise ValueError("a quartic needs exactly five coefficients")
        if not all(math.isfinite(v) for v in c):
            raise ValueError("quartic coefficients must be finite")
        object.__setattr__(self, "c", c)

    def __call__(self, alpha: float) -> float:
        c0, c1, c2, c3, c4 = self.c
        return c0 + self.increment(alpha)

    def increment(self, alpha: float) -> float:
        """``Q(alpha) - Q(0)``, evaluated without forming ``Q(0)``."""
        _, c1, c2, c3, c4 = self.c
        return alpha * (c1 + alpha * (c2 + alpha * (c3 + alpha * c4)))
