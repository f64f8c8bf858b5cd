"""Command-line driver.

    bhsne embed       --input data.bin --out emb.csv [options]
    bhsne bench-theta --input data.csv --labels --out theta.csv
    bhsne bench-size  --input data.csv --labels --out size.csv
    bhsne bench-dual  --input data.csv --labels --out rho.csv

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
from dataclasses import dataclass

import numba
import numpy as np

from .gradient import NumericalError
from .ingest import FormatError, RunConfig, load_labels, load_matrix, write_embedding
from .metrics import EvalReport, knn_error
from .optimizer import evaluate_cost
from .pipeline import embed

log = logging.getLogger("bhsne")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

EXACT_GUARD_N = 20000
LABEL_COLUMN = "<last-column>"

BENCH_COLUMNS = ["algorithm", "n", "param", "seconds", "knn_error", "final_kl", "seed"]
ECHO_COLUMNS = ["perplexity", "iterations", "alpha", "eta", "dims", "condition"]

DEFAULT_THETA_GRID = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"
DEFAULT_RHO_GRID = "0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5"
DEFAULT_SIZE_GRID = "1250,2500,5000,10000"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--input", required=True, help="data matrix (CSV or binary)")
    p.add_argument("--format", choices=["csv", "bin"], default=None,
                   help="input format (default: from extension)")
    p.add_argument("--labels", nargs="?", const=LABEL_COLUMN, default=None,
                   help="labels file (one integer per line); without a value the "
                        "last CSV column holds the labels")
    p.add_argument("--out", required=True, help="output path")
    d = RunConfig()
    p.add_argument("--perplexity", type=float, default=d.perplexity)
    p.add_argument("--theta", type=float, default=d.theta)
    p.add_argument("--rho", type=float, default=d.rho)
    p.add_argument("--iters", type=int, default=d.iterations)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--exaggeration-iters", type=int, default=d.exaggeration_iters)
    p.add_argument("--momentum-switch", type=int, default=d.momentum_switch_iter)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--dims", type=int, choices=[2, 3], default=d.dims)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--algorithm", choices=["exact", "bh", "dual"], default=d.algorithm)
    p.add_argument("--condition", choices=["standard", "paper-literal"],
                   default=d.condition)
    p.add_argument("--pca", type=int, default=d.pca_target,
                   help="PCA target dimensionality, 0 disables")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help=f"allow the exact algorithm above n={EXACT_GUARD_N}")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_bench(p, grid_default):
    p.add_argument("--bench-grid", default=grid_default,
                   help=f"comma separated grid (default {grid_default})")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--resume", action="store_true",
                   help="skip rows already present in --out")
    p.add_argument("--exact-cap", type=int, default=10000,
                   help="largest n for which the exact baseline is run")


def build_parser():
    parser = _Parser(prog="bhsne", description="Barnes-Hut t-SNE")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="embed a data matrix")
    _add_common(p)

    p = sub.add_parser("bench-theta", help="time and quality over a theta grid")
    _add_common(p)
    _add_bench(p, DEFAULT_THETA_GRID)

    p = sub.add_parser("bench-size", help="time and quality over data set sizes")
    _add_common(p)
    _add_bench(p, DEFAULT_SIZE_GRID)

    p = sub.add_parser("bench-dual", help="time and quality over a dual-tree rho grid")
    _add_common(p)
    _add_bench(p, DEFAULT_RHO_GRID)
    return parser


def config_from_args(args, **overrides):
    values = dict(
        perplexity=args.perplexity,
        theta=args.theta,
        rho=args.rho,
        iterations=args.iters,
        alpha=args.alpha,
        exaggeration_iters=args.exaggeration_iters,
        momentum_switch_iter=args.momentum_switch,
        eta=args.eta,
        dims=args.dims,
        seed=args.seed,
        algorithm=args.algorithm,
        condition=args.condition,
        pca_target=args.pca,
    )
    values.update(overrides)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load(args):
    X, labels = load_matrix(args.input, args.format,
                            has_label_column=args.labels == LABEL_COLUMN)
    if args.labels not in (None, LABEL_COLUMN):
        labels = load_labels(args.labels)
    if labels is not None and len(labels) != X.shape[0]:
        raise FormatError(f"{len(labels)} labels for {X.shape[0]} objects")
    return X, labels


def _guard_exact(config, n, force):
    if config.algorithm == "exact" and n > EXACT_GUARD_N and not force:
        raise UsageError(
            f"--algorithm exact on n={n} > {EXACT_GUARD_N} is O(N^2) per iteration; "
            "pass --force to run it anyway"
        )


def cmd_embed(args):
    X, labels = _load(args)
    config = config_from_args(args)
    _guard_exact(config, X.shape[0], args.force)
    result = embed(X, config)
    write_embedding(args.out, result.Y, labels)
    log.info("wrote %s (%.2f s)", args.out, result.seconds)
    if labels is not None:
        report = EvalReport(
            kl_cost=evaluate_cost(result.P, result.Y, config),
            knn_error=knn_error(result.Y, labels),
            wall_time_seconds=result.seconds,
            config=config.as_dict(),
        )
        sys.stdout.write(report.to_csv())
    return EXIT_OK


# --------------------------------------------------------------------------
# benchmarks


@dataclass
class BenchRecord:
    algorithm: str
    n: int
    param: float
    seconds: float
    knn_error: float
    final_kl: float
    seed: int

    def key(self):
        return (self.algorithm, self.n, _param_key(self.param), self.seed)


def _param_key(param):
    return round(float(param), 12)


def _parse_grid(text, kind):
    try:
        values = sorted(kind(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"bad --bench-grid {text!r}") from None
    if not values:
        raise UsageError("empty --bench-grid")
    return values


def _completed(path):
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return set()
    done = set()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                done.add((row["algorithm"], int(row["n"]), _param_key(row["param"]),
                          int(row["seed"])))
            except (KeyError, ValueError):
                raise FormatError(f"{path}: not a benchmark CSV") from None
    return done


class BenchWriter:
    """Appends records to a CSV, writing the header only to a new file."""

    def __init__(self, path, config):
        self.path = path
        self.echo = {k: getattr(config, k) for k in
                     ("perplexity", "iterations", "alpha", "eta", "dims", "condition")}

    def append(self, record):
        fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        with open(self.path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(BENCH_COLUMNS + ECHO_COLUMNS)
            writer.writerow([
                record.algorithm, record.n, repr(float(record.param)),
                repr(record.seconds), repr(record.knn_error), repr(record.final_kl),
                record.seed, *self.echo.values(),
            ])


def timed_run(X, labels, config, repeats):
    """Run the pipeline ``repeats`` times; median wall time, quality of the last run."""
    if repeats < 1:
        raise UsageError("--repeats must be >= 1")
    times = []
    result = None
    for _ in range(repeats):
        result = embed(X, config)
        times.append(result.seconds)
    err = knn_error(result.Y, labels) if labels is not None else float("nan")
    return BenchRecord(
        algorithm=config.algorithm,
        n=X.shape[0],
        param=config.trade_off,
        seconds=statistics.median(times),
        knn_error=err,
        final_kl=evaluate_cost(result.P, result.Y, config),
        seed=config.seed,
    )


def _bench(args, plan, X, labels):
    """``plan`` is a list of (X subset, labels subset, RunConfig)."""
    done = _completed(args.out) if args.resume else set()
    records = []
    writer = None
    for Xs, ls, config in plan:
        _guard_exact(config, Xs.shape[0], args.force)
        key = (config.algorithm, Xs.shape[0], _param_key(config.trade_off), config.seed)
        if key in done:
            log.info("skipping completed %s", key)
            continue
        record = timed_run(Xs, ls, config, args.repeats)
        if writer is None:
            writer = BenchWriter(args.out, config)
        writer.append(record)
        log.info("%s n=%d param=%g: %.2f s, 1-NN error %.4f", record.algorithm,
                 record.n, record.param, record.seconds, record.knn_error)
        records.append(record)
    return records


def cmd_bench_theta(args):
    X, labels = _load(args)
    grid = _parse_grid(args.bench_grid, float)
    plan = []
    if X.shape[0] <= args.exact_cap:
        plan.append((X, labels, config_from_args(args, algorithm="exact")))
    plan += [(X, labels, config_from_args(args, algorithm="bh", theta=t)) for t in grid]
    _bench(args, plan, X, labels)
    return EXIT_OK


def cmd_bench_dual(args):
    X, labels = _load(args)
    grid = _parse_grid(args.bench_grid, float)
    plan = [(X, labels, config_from_args(args, algorithm="dual", rho=r)) for r in grid]
    _bench(args, plan, X, labels)
    return EXIT_OK


def cmd_bench_size(args):
    X, labels = _load(args)
    grid = _parse_grid(args.bench_grid, int)
    if grid[-1] > X.shape[0]:
        raise UsageError(f"grid point {grid[-1]} exceeds the {X.shape[0]} available rows")
    if grid[0] < 2:
        raise UsageError("grid sizes must be >= 2")
    order = np.random.default_rng(args.seed).permutation(X.shape[0])
    plan = []
    for n in grid:
        rows = order[:n]
        Xs = X[rows]
        ls = labels[rows] if labels is not None else None
        if n <= args.exact_cap:
            plan.append((Xs, ls, config_from_args(args, algorithm="exact")))
        plan.append((Xs, ls, config_from_args(args, algorithm="bh")))
    _bench(args, plan, X, labels)
    return EXIT_OK


COMMANDS = {
    "embed": cmd_embed,
    "bench-theta": cmd_bench_theta,
    "bench-size": cmd_bench_size,
    "bench-dual": cmd_bench_dual,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be >= 1")
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bhsne: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"bhsne: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"bhsne: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
