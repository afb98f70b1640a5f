"""Ratings ingestion, median-window subsets, and synthetic sampling."""

from __future__ import annotations

import csv
import math
import os
from array import array
from dataclasses import dataclass

import numpy as np

from .core import RatingsMatrix

MOVIELENS_HEADER = ("userId", "movieId", "rating", "timestamp")


class DataError(ValueError):
    """Malformed or inconsistent ratings data."""


def ingest_csv(path: str | os.PathLike, has_header: bool = False) -> RatingsMatrix:
    """Load ``userId,movieId,rating[,timestamp]`` rows.

    Ids are re-indexed densely in order of first appearance; the original
    ids are kept on the result as ``user_ids``/``item_ids``.
    """
    user_map: dict[int, int] = {}
    item_map: dict[int, int] = {}
    users, items, lines = array("q"), array("q"), array("q")
    ratings = array("d")
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and has_header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) not in (3, 4):
                raise DataError(f"line {lineno}: expected 3 or 4 fields, got {len(row)}")
            try:
                uid, mid = int(row[0]), int(row[1])
                r = float(row[2])
            except ValueError:
                raise DataError(f"line {lineno}: cannot parse {row!r}") from None
            if uid <= 0 or mid <= 0:
                raise DataError(f"line {lineno}: ids must be positive integers")
            if not math.isfinite(r):
                raise DataError(f"line {lineno}: rating is not finite")
            users.append(user_map.setdefault(uid, len(user_map)))
            items.append(item_map.setdefault(mid, len(item_map)))
            ratings.append(r)
            lines.append(lineno)
    if not ratings:
        raise DataError(f"{path}: no ratings")
    u = np.frombuffer(users, dtype=np.int64)
    i = np.frombuffer(items, dtype=np.int64)
    order = np.lexsort((np.frombuffer(lines, dtype=np.int64), i, u))
    dup = (np.diff(u[order]) == 0) & (np.diff(i[order]) == 0)
    if np.any(dup):
        k = order[np.flatnonzero(dup)[0] + 1]
        raise DataError(f"line {lines[k]}: duplicate rating for user {_label(user_map, u[k])}, movie {_label(item_map, i[k])}")
    return RatingsMatrix.from_triples(
        len(user_map), len(item_map), u, i, np.frombuffer(ratings, dtype=np.float64),
        user_ids=np.fromiter(user_map, dtype=np.int64, count=len(user_map)),
        item_ids=np.fromiter(item_map, dtype=np.int64, count=len(item_map)),
    )


def _label(mapping: dict[int, int], dense: int) -> int:
    return next(k for k, v in mapping.items() if v == dense)


def _external_ids(ids: np.ndarray) -> np.ndarray:
    # Dense 0-based labels are shifted so every written id is positive.
    return ids + 1 if ids.size and ids.min() == 0 else ids


def write_csv(R: RatingsMatrix, path: str | os.PathLike, header: bool = True) -> None:
    """Write ratings as ``userId,movieId,rating`` using the matrix's id labels."""
    u, i, r = R.triples()
    u = _external_ids(R.user_ids)[u]
    i = _external_ids(R.item_ids)[i]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(MOVIELENS_HEADER[:3])
        w.writerows(zip(u.tolist(), i.tolist(), map(repr, r.tolist())))


def write_id_maps(R: RatingsMatrix, directory: str | os.PathLike) -> None:
    """``users.csv``/``items.csv`` with rows ``newId,originalId``."""
    for name, ids in (("users.csv", R.user_ids), ("items.csv", R.item_ids)):
        with open(os.path.join(directory, name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("newId", "originalId"))
            w.writerows(enumerate(_external_ids(ids).tolist()))


def median_window(counts: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """Positions selected by the median-centred window over ``counts``.

    Sorted by count descending (ties: ascending id), with ``c = len // 2``
    the rows ``c - n//2 .. c + ceil(n/2) - 1`` are taken. Returns the
    selected positions in sorted order.
    """
    order = np.lexsort((ids, -np.asarray(counts)))
    c = len(order) // 2
    lo, hi = c - n // 2, c + (n + 1) // 2 - 1
    if n < 0 or lo < 0 or hi >= len(order):
        raise DataError(f"window of {n} around median index {c} exceeds {len(order)} entries")
    return order[lo : hi + 1]


def build_subset(full: RatingsMatrix, n_u: int, n_m: int) -> RatingsMatrix:
    """Median-centred ``n_u x n_m`` subset.

    Users are chosen by their rating counts; items are then chosen by
    counts computed over the chosen users only. Selected users and items
    keep their relative order; empty rows/columns are kept.
    """
    if n_u > full.n_u or n_m > full.n_m:
        raise DataError("subset larger than the full matrix")
    sel_u = np.sort(median_window(full.user_counts, full.user_ids, n_u))
    u, i, r = full.triples()
    keep = np.isin(u, sel_u)
    u, i, r = u[keep], i[keep], r[keep]
    item_counts = np.bincount(i, minlength=full.n_m)
    sel_m = np.sort(median_window(item_counts, full.item_ids, n_m))
    keep = np.isin(i, sel_m)
    u, i, r = u[keep], i[keep], r[keep]
    return RatingsMatrix.from_triples(
        n_u, n_m, np.searchsorted(sel_u, u), np.searchsorted(sel_m, i), r,
        user_ids=full.user_ids[sel_u], item_ids=full.item_ids[sel_m],
    )


@dataclass(frozen=True)
class EmpiricalDistributions:
    """Histograms driving synthetic sampling.

    ``count_values``/``count_probs``: ratings per user. ``item_probs``:
    per-item selection probability, proportional to its rating count.
    ``rating_values``/``rating_probs``: observed rating values.
    """

    count_values: np.ndarray
    count_probs: np.ndarray
    item_probs: np.ndarray
    rating_values: np.ndarray
    rating_probs: np.ndarray

    @property
    def n_m(self) -> int:
        return self.item_probs.size

    def mean_ratings_per_user(self) -> float:
        return float(self.count_values @ self.count_probs)


def _hist(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, counts = np.unique(a, return_counts=True)
    return vals, counts / counts.sum()


def fit_distributions(R: RatingsMatrix) -> EmpiricalDistributions:
    if R.nnz == 0:
        raise DataError("cannot fit distributions to an empty matrix")
    cv, cp = _hist(R.user_counts)
    rv, rp = _hist(R.user_ratings)
    ic = R.item_counts.astype(np.float64)
    return EmpiricalDistributions(cv, cp, ic / ic.sum(), rv, rp)


def sample_synthetic(
    dist: EmpiricalDistributions,
    n_u: int,
    n_m: int,
    seed: int | None = None,
    max_retries: int = 100,
) -> RatingsMatrix:
    """Draw ``n_u`` users with count, items and ratings from ``dist``.

    Items within a user are distinct (duplicate draws are rejected and
    redrawn, up to ``100 * count`` draws per user).
    """
    if n_m != dist.n_m:
        raise DataError(f"n_m={n_m} but the distributions cover {dist.n_m} items")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(dist.item_probs)
    cdf /= cdf[-1]
    support = int(np.count_nonzero(dist.item_probs))
    counts = rng.choice(dist.count_values, size=n_u, p=dist.count_probs)
    for bad in np.flatnonzero(counts > support):
        for _ in range(max_retries):
            counts[bad] = rng.choice(dist.count_values, p=dist.count_probs)
            if counts[bad] <= support:
                break
        else:
            raise DataError(f"user {bad}: could not draw a count <= {support} items")

    indptr = np.zeros(n_u + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    items = np.empty(indptr[-1], dtype=np.int64)
    for u in range(n_u):
        n = int(counts[u])
        chosen: dict[int, None] = {}
        budget = 100 * n
        while len(chosen) < n:
            if budget <= 0:
                raise DataError(f"user {u}: too many duplicate draws")
            k = min(budget, 2 * (n - len(chosen)) + 4)
            budget -= k
            for j in np.searchsorted(cdf, rng.random(k), side="right").tolist():
                if len(chosen) == n:
                    break
                chosen.setdefault(j, None)
        items[indptr[u] : indptr[u + 1]] = np.sort(np.fromiter(chosen, dtype=np.int64, count=n))
    ratings = rng.choice(dist.rating_values, size=items.size, p=dist.rating_probs)
    users = np.repeat(np.arange(n_u, dtype=np.int64), counts)
    return RatingsMatrix.from_triples(n_u, n_m, users, items, ratings)


def movielens_like(n_u: int, n_m: int, seed: int = 0, rank: int = 5, min_count: int = 20) -> RatingsMatrix:
    """A stand-in for MovieLens when the real data is unavailable.

    Heavy-tailed ratings-per-user (log-normal, at least ``min_count``),
    Zipf-like item popularity, and half-star ratings from a noisy low-rank
    model so the data has learnable structure.
    """
    rng = np.random.default_rng(seed)
    counts = np.minimum(np.maximum(min_count, rng.lognormal(math.log(70), 1.0, n_u).astype(np.int64)), n_m)
    pop = 1.0 / np.arange(1, n_m + 1) ** 0.9
    pop = pop[rng.permutation(n_m)]
    pop /= pop.sum()
    U = rng.normal(size=(n_u, rank))
    M = rng.normal(size=(n_m, rank))
    bias = rng.normal(0.0, 0.4, n_m)
    users, items = [], []
    for u in range(n_u):
        chosen = rng.choice(n_m, size=counts[u], replace=False, p=pop)
        users.append(np.full(chosen.size, u))
        items.append(chosen)
    users = np.concatenate(users)
    items = np.concatenate(items)
    raw = 3.5 + bias[items] + 0.5 * np.einsum("kf,kf->k", U[users], M[items]) / math.sqrt(rank)
    raw += rng.normal(0.0, 0.6, raw.size)
    ratings = np.clip(np.round(raw * 2) / 2, 0.5, 5.0)
    return RatingsMatrix.from_triples(n_u, n_m, users, items, ratings)
