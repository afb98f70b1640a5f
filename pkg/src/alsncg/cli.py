"""Command-line entry point: ``alsncg <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import ConvergenceTrace, SolverConfig
from .data import DataError, build_subset, fit_distributions, ingest_csv, movielens_like, sample_synthetic, write_csv, write_id_maps
from .experiments import (
    ExperimentSpec,
    cmd_rank_eval,
    cmd_speedup,
    cmd_train,
    parse_config_file,
    speedup_at,
    speedup_to_csv,
)

log = logging.getLogger("alsncg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag dest -> (SolverConfig field, type)
_SOLVER_FLAGS = {
    "lam": ("lam", float),
    "rank": ("n_f", int),
    "tol": ("tol", float),
    "max_iters": ("max_iters", int),
    "seed": ("seed", int),
    "alpha0": ("alpha0", float),
    "armijo_c": ("armijo_c", float),
    "tau": ("tau", float),
    "max_backtracks": ("max_backtracks", int),
    "blocks": ("n_blocks", int),
    "workers": ("n_workers", int),
    "trace_every": ("trace_every", int),
    "snapshot_every": ("snapshot_every", int),
}
_CONFIG_ALIASES = {"lambda": "lam"}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    # Defaults are None so a config file can fill gaps; SolverConfig holds real defaults.
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--algo", choices=["als", "als-ncg"])
    p.add_argument("--lambda", dest="lam", type=float, help="regularization weight (default 0.1)")
    p.add_argument("--rank", type=int, help="number of latent factors (default 10)")
    p.add_argument("--tol", type=float, help="stop when ||g||/N falls below this (default 1e-6)")
    p.add_argument("--max-iters", type=int, help="iteration cap (default 10000)")
    p.add_argument("--seed", type=int, help="first RNG seed (default 0)")
    p.add_argument("--seeds", type=int, help="number of seeded repetitions (default 1)")
    p.add_argument("--alpha0", type=float, help="initial line-search step (default 10)")
    p.add_argument("--armijo-c", type=float, help="sufficient-decrease constant (default 0.5)")
    p.add_argument("--tau", type=float, help="backtracking factor (default 0.9)")
    p.add_argument("--max-backtracks", type=int, help="line-search shrink cap (default 100)")
    p.add_argument("--blocks", type=int, help="partition count (default: --workers)")
    p.add_argument("--workers", type=int, help="worker threads (default 1)")
    p.add_argument("--trace-every", type=int, help="iterations between trace rows (default 1)")
    p.add_argument("--snapshot-every", type=int, help="iterations between model snapshots (0 = off)")
    p.add_argument("--t", type=int, help="ranking cutoff t stored with the run (default 20)")
    p.add_argument("--paper-timing", action="store_const", const=True, default=None,
                   help="exclude gradient-norm evaluation from ALS timings")
    p.add_argument("--single-precision", action="store_const", const=True, default=None,
                   help="store snapshots in float32")
    p.add_argument("--has-header", action="store_true", help="dataset has a header line")
    p.add_argument("--out", default="out", help="output directory")


def _experiment_spec(args) -> ExperimentSpec:
    settings: dict[str, str] = {}
    if args.config:
        settings = parse_config_file(Path(args.config).read_text(encoding="utf-8"))
    settings = {_CONFIG_ALIASES.get(k, k): v for k, v in settings.items()}
    known = set(_SOLVER_FLAGS) | {"algo", "seeds", "t", "paper_timing", "single_precision"}
    unknown = set(settings) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(name, conv):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in settings:
            try:
                return conv(settings[name])
            except ValueError as err:
                raise UsageError(f"config key {name}: {err}") from None
        return None

    cfg = {}
    for flag, (fname, conv) in _SOLVER_FLAGS.items():
        v = pick(flag, conv)
        if v is not None:
            cfg[fname] = v
    for flag, fname in (("paper_timing", "paper_timing"), ("single_precision", "single_precision_storage")):
        v = pick(flag, _bool)
        if v is not None:
            cfg[fname] = v
    try:
        config = SolverConfig(**cfg)
        return ExperimentSpec(
            dataset=args.dataset,
            algorithm=pick("algo", str) or "als-ncg",
            config=config,
            repetitions=pick("seeds", int) or 1,
            t=pick("t", int) or 20,
            out_dir=args.out,
        )
    except ValueError as err:
        raise UsageError(str(err)) from None


def _run_ingest(args) -> None:
    R = ingest_csv(args.input, args.has_header)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(R, out / "ratings.csv")
    write_id_maps(R, out)
    print(f"users={R.n_u} items={R.n_m} ratings={R.nnz}")


def _run_subset(args) -> None:
    full = ingest_csv(args.input, args.has_header)
    R = build_subset(full, args.n_users, args.n_items)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(R, out / "ratings.csv")
    write_id_maps(R, out)
    print(f"users={R.n_u} items={R.n_m} ratings={R.nnz} empty_users={R.empty_users.size} empty_items={R.empty_items.size}")


def _run_synth(args) -> None:
    if args.input:
        src = ingest_csv(args.input, args.has_header)
    elif args.like_movielens:
        nu, nm = args.like_movielens
        src = movielens_like(nu, nm, seed=args.seed)
    else:
        raise UsageError("synth needs an input file or --like-movielens N_USERS N_ITEMS")
    R = sample_synthetic(fit_distributions(src), args.n_users, src.n_m, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(R, out / "ratings.csv")
    print(f"users={R.n_u} items={R.n_m} ratings={R.nnz}")


def _run_train(args) -> None:
    spec = _experiment_spec(args)
    R = ingest_csv(spec.dataset, args.has_header)
    results = cmd_train(spec, R)
    for r in results:
        last = r.trace[-1]
        print(f"seed={r.seed} iters={last.iter} converged={r.trace.converged} grad_norm={last.grad_norm:.3e} loss={last.loss:.6g}")


def _run_speedup(args) -> None:
    ta = ConvergenceTrace.from_csv(Path(args.als).read_text())
    tn = ConvergenceTrace.from_csv(Path(args.ncg).read_text())
    rows = cmd_speedup(ta, tn, args.time_als, args.time_ncg, window=args.window)
    text = speedup_to_csv(rows)
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        for level in (1e-3, 1e-4, 1e-5, 1e-6):
            print(f"speedup at {level:g}: {speedup_at(rows, level):.3f}")


def _run_rank_eval(args) -> None:
    res = cmd_rank_eval(args.model_dir, args.reference, args.t)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rank_accuracy.csv").write_text(res.to_csv())
    (out / "rank_crossings.csv").write_text(res.crossings_csv())
    for thr, row in res.crossings.items():
        when = "never" if row is None else f"iter {row.iter} at {row.elapsed_s:.3f}s"
        print(f"{thr:.0%}: {when}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alsncg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="normalize a MovieLens-style CSV")
    p.add_argument("input")
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--out", default="data")
    p.set_defaults(func=_run_ingest)

    p = sub.add_parser("subset", help="median-centred subset of users and items")
    p.add_argument("input")
    p.add_argument("--n-users", type=int, required=True)
    p.add_argument("--n-items", type=int, required=True)
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--out", default="data")
    p.set_defaults(func=_run_subset)

    p = sub.add_parser("synth", help="sample a synthetic dataset with matched statistics")
    p.add_argument("input", nargs="?")
    p.add_argument("--n-users", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--like-movielens", nargs=2, type=int, metavar=("N_USERS", "N_ITEMS"),
                   help="fit to a generated MovieLens-like source instead of a file")
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--out", default="data")
    p.set_defaults(func=_run_synth)

    p = sub.add_parser("train", help="train ALS or ALS-NCG and write traces")
    p.add_argument("dataset")
    _add_solver_flags(p)
    p.set_defaults(func=_run_train)

    p = sub.add_parser("speedup", help="ALS-NCG speedup versus gradient-norm level")
    p.add_argument("--als", required=True, help="ALS trace CSV")
    p.add_argument("--ncg", required=True, help="ALS-NCG trace CSV")
    p.add_argument("--time-als", type=float, help="seconds per ALS iteration (default: from trace)")
    p.add_argument("--time-ncg", type=float, help="seconds per ALS-NCG iteration (default: from trace)")
    p.add_argument("--window", type=int, default=2, help="moving-average window on ALS-NCG norms")
    p.add_argument("--out", default="-")
    p.set_defaults(func=_run_speedup)

    p = sub.add_parser("rank-eval", help="ranking accuracy of snapshots against a reference model")
    p.add_argument("model_dir")
    p.add_argument("--reference", required=True, help="reference model snapshot (.npz)")
    p.add_argument("--t", type=int, default=20)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_run_rank_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as err:
        print(f"alsncg: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as err:
        print(f"alsncg: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001 - top-level reporter
        log.debug("runtime failure", exc_info=True)
        print(f"alsncg: runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
