"""Block-partitioned execution of the ALS half-sweeps.

Factor columns are hash partitioned (``j -> j mod n_b``). For every
(source block, destination block) pair a routing table lists the columns the
destination needs, each listed once. A half-sweep gathers, for each
destination block, exactly those columns into a local buffer and solves the
block's normal equations against it. The gather stands in for the network
shuffle of a cluster implementation and :class:`ShuffleStats` counts what
would have been sent.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .core import FactorModel, FlatVector, RatingsMatrix
from .normal_equations import solve_rows

Kind = Literal["users", "items"]


@dataclass(frozen=True)
class Partitioning:
    n: int
    n_blocks: int

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.n < 0:
            raise ValueError("n must be >= 0")

    def block_of(self, j):
        return np.asarray(j) % self.n_blocks if not np.isscalar(j) else int(j) % self.n_blocks

    def members(self, b: int) -> np.ndarray:
        return np.arange(b, self.n, self.n_blocks, dtype=np.int64)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(range(b, self.n, self.n_blocks)) for b in range(self.n_blocks))


def build_partitioning(n: int, n_blocks: int) -> Partitioning:
    return Partitioning(int(n), int(n_blocks))


@dataclass(frozen=True, eq=False)
class RoutingTable:
    """Columns of the source side to ship to each destination block.

    ``routes[(src, dst)]`` is a sorted, duplicate-free array of source
    column ids; pairs with nothing to send are absent.
    """

    source: Partitioning
    dest: Partitioning
    routes: dict[tuple[int, int], np.ndarray]

    def get(self, src: int, dst: int) -> np.ndarray:
        return self.routes.get((src, dst), np.empty(0, dtype=np.int64))

    def gathered(self, dst: int) -> np.ndarray:
        """All columns arriving at ``dst``, ordered by source block then id."""
        parts = [self.get(s, dst) for s in range(self.source.n_blocks)]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def pair_counts(self) -> dict[tuple[int, int], int]:
        return {k: int(v.size) for k, v in sorted(self.routes.items())}

    @property
    def columns_sent(self) -> int:
        return sum(int(v.size) for v in self.routes.values())

    @property
    def cross_block_columns(self) -> int:
        return sum(int(v.size) for (s, d), v in self.routes.items() if s != d)

    def __eq__(self, other):
        if not isinstance(other, RoutingTable):
            return NotImplemented
        return (
            self.source == other.source
            and self.dest == other.dest
            and self.routes.keys() == other.routes.keys()
            and all(np.array_equal(v, other.routes[k]) for k, v in self.routes.items())
        )


def _routes(src_ids, dst_ids, src_part: Partitioning, dst_part: Partitioning):
    sb = src_ids % src_part.n_blocks
    db = dst_ids % dst_part.n_blocks
    key = np.unique(np.stack([sb, db, src_ids], axis=1), axis=0)
    routes = {}
    if key.size == 0:
        return routes
    pair = key[:, 0] * dst_part.n_blocks + key[:, 1]
    cuts = np.flatnonzero(np.diff(pair)) + 1
    for chunk in np.split(key, cuts):
        routes[(int(chunk[0, 0]), int(chunk[0, 1]))] = np.ascontiguousarray(chunk[:, 2])
    return routes


def build_routing_tables(
    R: RatingsMatrix, part_u: Partitioning, part_m: Partitioning
) -> tuple[RoutingTable, RoutingTable]:
    """Return ``(T_u, T_m)``.

    ``T_m`` routes item columns to the user blocks that rate them (used by
    the user update); ``T_u`` routes user columns to item blocks.
    """
    if part_u.n != R.n_u or part_m.n != R.n_m:
        raise ValueError("partitionings do not cover the ratings matrix")
    users, items, _ = R.triples()
    T_m = RoutingTable(part_m, part_u, _routes(items, users, part_m, part_u))
    T_u = RoutingTable(part_u, part_m, _routes(users, items, part_u, part_m))
    return T_u, T_m


@dataclass
class ShuffleStats:
    kind: str
    n_f: int
    per_pair: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def columns_sent(self) -> int:
        return sum(self.per_pair.values())

    @property
    def cross_block_columns(self) -> int:
        return sum(v for (s, d), v in self.per_pair.items() if s != d)

    @property
    def scalar_values_sent(self) -> int:
        return self.columns_sent * self.n_f

    @classmethod
    def from_table(cls, kind: str, table: RoutingTable, n_f: int) -> "ShuffleStats":
        return cls(kind, n_f, table.pair_counts())

    def merge(self, other: "ShuffleStats") -> "ShuffleStats":
        merged = dict(self.per_pair)
        for k, v in other.per_pair.items():
            merged[k] = merged.get(k, 0) + v
        return ShuffleStats(f"{self.kind}+{other.kind}", self.n_f, dict(sorted(merged.items())))


@dataclass(frozen=True, eq=False)
class _BlockPlan:
    rows: np.ndarray  # global ids of destination columns in this block
    gathered: np.ndarray  # global ids of source columns delivered to the block
    indptr: np.ndarray  # local CSR over ``rows``
    indices: np.ndarray  # positions into ``gathered``
    values: np.ndarray


def _plan_blocks(indptr, indices, values, dest: Partitioning, table: RoutingTable) -> list[_BlockPlan]:
    lookup = np.full(table.source.n, -1, dtype=np.int64)
    plans = []
    for b in range(dest.n_blocks):
        rows = dest.members(b)
        gathered = table.gathered(b)
        lookup[gathered] = np.arange(gathered.size)
        counts = indptr[rows + 1] - indptr[rows]
        local_ptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(counts, out=local_ptr[1:])
        take = np.concatenate([np.arange(indptr[i], indptr[i + 1]) for i in rows]) if rows.size else np.empty(0, np.int64)
        take = take.astype(np.int64, copy=False)
        local_idx = lookup[indices[take]]
        if np.any(local_idx < 0):
            raise ValueError("routing table inconsistent with ratings")
        plans.append(_BlockPlan(rows, gathered, local_ptr, local_idx, values[take]))
        lookup[gathered] = -1
    return plans


class BlockExecutor:
    """Runs half-sweeps block by block over a thread pool.

    Plans (local CSR slices and gather lists) are derived once from the
    routing tables and reused every iteration.
    """

    def __init__(self, R: RatingsMatrix, n_blocks: int = 1, n_workers: int = 1, tables=None):
        self.R = R
        self.n_workers = int(n_workers)
        if tables is None:
            part_u = build_partitioning(R.n_u, n_blocks)
            part_m = build_partitioning(R.n_m, n_blocks)
            tables = build_routing_tables(R, part_u, part_m)
        self.T_u, self.T_m = tables
        self.part_u, self.part_m = self.T_m.dest, self.T_u.dest
        self._plans = {
            "users": _plan_blocks(R.user_indptr, R.user_items, R.user_ratings, self.part_u, self.T_m),
            "items": _plan_blocks(R.item_indptr, R.item_users, R.item_ratings, self.part_m, self.T_u),
        }

    def _map(self, fn, plans):
        if self.n_workers == 1 or len(plans) == 1:
            return [fn(p) for p in plans]
        with ThreadPoolExecutor(self.n_workers) as pool:
            return list(pool.map(fn, plans))

    def half_sweep(self, kind: Kind, other: np.ndarray, lam: float) -> tuple[np.ndarray, ShuffleStats]:
        """Solve all ``kind`` columns given the opposite side's factors."""
        if kind == "users":
            n, table, labels = self.R.n_u, self.T_m, self.R.user_ids
        elif kind == "items":
            n, table, labels = self.R.n_m, self.T_u, self.R.item_ids
        else:
            raise ValueError(f"unknown half-sweep kind {kind!r}")
        nf = other.shape[1]
        out = np.empty((n, nf))

        def run(plan: _BlockPlan):
            buf = np.ascontiguousarray(other[plan.gathered])
            local = np.empty((plan.rows.size, nf))
            solve_rows(
                plan.indptr, plan.indices, plan.values, buf, lam,
                np.arange(plan.rows.size, dtype=np.int64), local,
                kind=kind[:-1], labels=labels[plan.rows],
            )
            out[plan.rows] = local

        self._map(run, self._plans[kind])
        return out, ShuffleStats.from_table(kind, table, nf)

    def sweep(self, x: FlatVector, lam: float) -> tuple[FlatVector, int]:
        """One ALS iteration; returns the new iterate and cross-block columns moved."""
        users, s1 = self.half_sweep("users", x.items, lam)
        items, s2 = self.half_sweep("items", users, lam)
        return FlatVector(users, items), s1.cross_block_columns + s2.cross_block_columns

    @property
    def sweep_shuffle(self) -> int:
        return self.T_m.cross_block_columns + self.T_u.cross_block_columns

    def gradient(self, x: FlatVector, lam: float) -> FlatVector:
        """Gradient computed block-wise; each column's sum order matches the serial pass."""
        R = self.R
        gu = np.zeros_like(x.users)
        gm = np.zeros_like(x.items)

        def users(b):
            _kernels.gradient_rows(R.user_indptr, R.user_items, R.user_ratings, x.users, x.items, lam, self.part_u.members(b), gu)

        def items(b):
            _kernels.gradient_rows(R.item_indptr, R.item_users, R.item_ratings, x.items, x.users, lam, self.part_m.members(b), gm)

        self._map(users, range(self.part_u.n_blocks))
        self._map(items, range(self.part_m.n_blocks))
        return FlatVector(gu, gm)


def parallel_half_sweep(
    kind: Kind,
    model: FactorModel | FlatVector,
    R: RatingsMatrix,
    lam: float,
    tables: tuple[RoutingTable, RoutingTable],
    n_workers: int = 1,
) -> tuple[np.ndarray, ShuffleStats]:
    """Block-parallel ``update_users``/``update_items``.

    Returns factors in the solver layout (one row per column) together with
    the shuffle volume implied by ``tables``.
    """
    if isinstance(model, FactorModel):
        other = model.M.T if kind == "users" else model.U.T
    else:
        other = model.items if kind == "users" else model.users
    ex = BlockExecutor(R, n_workers=n_workers, tables=tables)
    return ex.half_sweep(kind, np.ascontiguousarray(other, dtype=np.float64), lam)


SNAPSHOT_VERSION = 1


def save_snapshot(
    path: str | os.PathLike,
    model: FactorModel,
    iter: int,
    seed: int,
    elapsed_s: float = 0.0,
    single_precision: bool = False,
) -> None:
    """Write a model snapshot (``.npz``: a JSON header plus ``U`` and ``M``).

    Header keys: ``version, n_f, n_u, n_m, iter, seed, elapsed_s, dtype``.
    """
    dtype = np.float32 if single_precision else np.float64
    header = {
        "version": SNAPSHOT_VERSION,
        "n_f": model.n_f,
        "n_u": model.n_u,
        "n_m": model.n_m,
        "iter": int(iter),
        "seed": int(seed),
        "elapsed_s": float(elapsed_s),
        "dtype": np.dtype(dtype).name,
    }
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), U=model.U.astype(dtype), M=model.M.astype(dtype))


def load_snapshot(path: str | os.PathLike) -> tuple[FactorModel, dict]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {header.get('version')}")
        U = z["U"].astype(np.float64)
        M = z["M"].astype(np.float64)
    if U.shape != (header["n_f"], header["n_u"]) or M.shape != (header["n_f"], header["n_m"]):
        raise ValueError("snapshot header does not match stored arrays")
    return FactorModel(U, M), header
