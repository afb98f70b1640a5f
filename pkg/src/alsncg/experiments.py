"""Experiment protocol: repeated seeded training, speedup curves, ranking accuracy over time."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .als import als_solve
from .core import ConvergenceTrace, FactorModel, RatingsMatrix, SolverConfig, format_float
from .ncg import als_ncg_solve
from .parallel import BlockExecutor, load_snapshot, save_snapshot
from .ranking import DEFAULT_T, mean_ranking_accuracy

ALGORITHMS = {"als": als_solve, "als-ncg": als_ncg_solve}
RANK_THRESHOLDS = (0.7, 0.8, 0.9, 1.0)


@dataclass
class ExperimentSpec:
    dataset: str
    algorithm: str = "als-ncg"
    config: SolverConfig = field(default_factory=SolverConfig)
    repetitions: int = 1
    t: int = DEFAULT_T
    out_dir: str = "out"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return [self.config.seed + r for r in range(self.repetitions)]


def parse_config_file(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment. Keys normalize ``-`` to ``_``."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


@dataclass
class TrainResult:
    seed: int
    model: FactorModel
    trace: ConvergenceTrace


def trace_summary(trace: ConvergenceTrace, snapshot_every: int = 0) -> dict:
    """Iteration count, convergence flag and mean iteration times.

    With snapshots enabled, iterations that wrote one and those that did
    not are averaged separately.
    """
    it = trace.iters
    el = trace.elapsed
    steps = np.diff(it)
    dt = np.diff(el)
    per = dt[steps == 1] if steps.size else dt
    summary = {
        "iterations": int(trace.final_iter),
        "converged": bool(trace.converged),
        "final_grad_norm": float(trace.grad_norms[-1]) if len(trace) else math.nan,
        "final_loss": float(trace.losses[-1]) if len(trace) else math.nan,
        "mean_iteration_s": trace.mean_iteration_time(),
    }
    if snapshot_every and per.size:
        # dt[k] covers iteration it[k] -> it[k]+1; the snapshot at it[k] is inside it.
        marks = (it[:-1][steps == 1] % snapshot_every) == 0
        summary["mean_snapshot_iteration_s"] = float(per[marks].mean()) if marks.any() else math.nan
        summary["mean_plain_iteration_s"] = float(per[~marks].mean()) if (~marks).any() else math.nan
    return summary


def cmd_train(spec: ExperimentSpec, R: RatingsMatrix) -> list[TrainResult]:
    """Train ``spec.repetitions`` seeded runs and write traces, models and a summary.

    Files: ``trace-<algo>-seed<k>.csv``, ``model-<algo>-seed<k>.npz`` and
    ``summary-<algo>.json``; with snapshots on, ``snapshots/<algo>-seed<k>/``.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    solve = ALGORITHMS[spec.algorithm]
    ex = BlockExecutor(R, spec.config.n_blocks, spec.config.n_workers)
    results, summaries = [], {}
    for seed in spec.seeds:
        cfg = SolverConfig(**{**vars(spec.config), "seed": seed})
        if cfg.snapshot_every:
            cfg.snapshot_dir = str(out / "snapshots" / f"{spec.algorithm}-seed{seed}")
        model, trace = solve(R, cfg, executor=ex)
        (out / f"trace-{spec.algorithm}-seed{seed}.csv").write_text(trace.to_csv())
        save_snapshot(
            out / f"model-{spec.algorithm}-seed{seed}.npz", model, trace.final_iter, seed,
            trace.elapsed[-1], cfg.single_precision_storage,
        )
        summaries[str(seed)] = trace_summary(trace, cfg.snapshot_every)
        results.append(TrainResult(seed, model, trace))
    (out / f"summary-{spec.algorithm}.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return results


@dataclass(frozen=True)
class SpeedupRow:
    grad_norm: float
    als_iters: int | None  # None: ALS never reached this level
    ncg_iters: int
    speedup: float


def moving_average(values: Sequence[float], window: int = 2) -> np.ndarray:
    """Trailing mean over up to ``window`` consecutive values."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1 or v.size == 0:
        return v.copy()
    # Windows are summed directly: differences of a running sum lose the
    # small late norms to cancellation against the large early ones.
    total = v.copy()
    for lag in range(1, window):
        total[lag:] += v[:-lag]
    return total / np.minimum(np.arange(1, v.size + 1), window)


def _norms_and_iters(trace) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trace, ConvergenceTrace):
        return trace.grad_norms, trace.iters
    norms = np.asarray(trace, dtype=np.float64)
    return norms, np.arange(1, norms.size + 1)


def cmd_speedup(
    trace_als,
    trace_ncg,
    per_iter_time_als: float | None = None,
    per_iter_time_ncg: float | None = None,
    window: int = 2,
) -> list[SpeedupRow]:
    """Speedup of ALS-NCG over ALS as a function of the gradient norm reached.

    Traces are :class:`ConvergenceTrace` objects or plain sequences of
    normalized gradient norms (entry ``k`` taken as the value after
    ``k + 1`` iterations). ALS-NCG norms are smoothed with a trailing
    moving average of ``window`` values. For each smoothed level the first
    ALS iteration with an equal or smaller norm is located, and the speedup
    is ``als_iters * t_als / (ncg_iters * t_ncg)``. Missing per-iteration
    times are taken from the traces.
    """
    a_norms, a_iters = _norms_and_iters(trace_als)
    n_norms, n_iters = _norms_and_iters(trace_ncg)
    if per_iter_time_als is None:
        per_iter_time_als = trace_als.mean_iteration_time()
    if per_iter_time_ncg is None:
        per_iter_time_ncg = trace_ncg.mean_iteration_time()
    smooth = moving_average(n_norms, window)
    # running minimum turns "first ALS iteration at or below level" into a search
    a_best = np.minimum.accumulate(a_norms)
    rows = []
    for level, k in zip(smooth.tolist(), n_iters.tolist()):
        if k <= 0:
            continue
        hit = int(np.searchsorted(-a_best, -level, side="left"))
        if hit >= a_best.size:
            rows.append(SpeedupRow(level, None, k, math.inf))
            continue
        ai = int(a_iters[hit])
        rows.append(SpeedupRow(level, ai, k, (ai * per_iter_time_als) / (k * per_iter_time_ncg)))
    return rows


def speedup_at(rows: Sequence[SpeedupRow], level: float) -> float:
    """Speedup at the first ALS-NCG point whose smoothed norm is <= ``level``."""
    for r in rows:
        if r.grad_norm <= level:
            return r.speedup
    return math.nan


SPEEDUP_COLUMNS = ("grad_norm", "als_iters", "ncg_iters", "speedup")


def speedup_to_csv(rows: Sequence[SpeedupRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPEEDUP_COLUMNS)
    for r in rows:
        w.writerow([
            format_float(r.grad_norm),
            "unbounded" if r.als_iters is None else r.als_iters,
            r.ncg_iters,
            "unbounded" if r.als_iters is None else format_float(r.speedup),
        ])
    return buf.getvalue()


def speedup_from_csv(text: str) -> list[SpeedupRow]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != SPEEDUP_COLUMNS:
        raise ValueError("not a speedup table: bad header")
    out = []
    for g, a, n, s in rows[1:]:
        unb = a == "unbounded"
        out.append(SpeedupRow(float(g), None if unb else int(a), int(n), math.inf if unb else float(s)))
    return out


@dataclass(frozen=True)
class RankEvalRow:
    iter: int
    elapsed_s: float
    mean_q: float


@dataclass
class RankEvalResult:
    rows: list[RankEvalRow]
    crossings: dict[float, RankEvalRow | None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("iter", "elapsed_s", "mean_q"))
        for r in self.rows:
            w.writerow([r.iter, format_float(r.elapsed_s), format_float(r.mean_q)])
        return buf.getvalue()

    def crossings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("threshold", "iter", "elapsed_s"))
        for thr, r in self.crossings.items():
            w.writerow([format_float(thr), "" if r is None else r.iter, "" if r is None else format_float(r.elapsed_s)])
        return buf.getvalue()

    def time_to(self, threshold: float) -> float:
        r = self.crossings.get(threshold)
        return math.inf if r is None else r.elapsed_s


_SNAP_ITER = re.compile(r"iter(\d+)\.npz$")


def list_snapshots(model_dir: str | os.PathLike) -> list[Path]:
    files = [p for p in Path(model_dir).iterdir() if _SNAP_ITER.search(p.name)]
    return sorted(files, key=lambda p: int(_SNAP_ITER.search(p.name).group(1)))


def cmd_rank_eval(
    model_dir: str | os.PathLike,
    reference_model: FactorModel | str | os.PathLike,
    t: int = DEFAULT_T,
    thresholds: Sequence[float] = RANK_THRESHOLDS,
) -> RankEvalResult:
    """Mean ranking accuracy of every snapshot in ``model_dir`` against a reference.

    A threshold is crossed at the first snapshot whose accuracy reaches it.
    """
    if not isinstance(reference_model, FactorModel):
        reference_model, _ = load_snapshot(reference_model)
    snaps = list_snapshots(model_dir)
    if not snaps:
        raise FileNotFoundError(f"no snapshots in {model_dir}")
    rows = []
    for path in snaps:
        model, header = load_snapshot(path)
        rows.append(RankEvalRow(header["iter"], header["elapsed_s"], mean_ranking_accuracy(model, reference_model, t)))
    crossings = {thr: next((r for r in rows if r.mean_q >= thr), None) for thr in thresholds}
    return RankEvalResult(rows, crossings)
