"""Command-line entry point: ``owlgraph {estimate,synth,eval,cv,bench}``.

Exit codes are 0 on success, 1 for usage or I/O errors and 2 when an
estimator fails. Set ``OWLGRAPH_LOG`` (e.g. ``INFO``) to change the log level.
"""
import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ccgowl import ASSEMBLY_MODES, estimate_ccgowl
from .evaluation import cross_validate, default_grid, evaluate, gmm_cluster_entries
from .gowl import estimate_gowl, n_offdiag, vechs
from .owl import OscarParams, oscar_weights
from .structures import SolverConfig, SolverError
from .synth import SynthConfig, make_instance, sample_covariance, standardize

logger = logging.getLogger("owlgraph")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- file helpers -----------------------------------------------------------

def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_matrix(path):
    """Read a numeric CSV, skipping a single header row if present."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: empty file")
    if not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise UsageError(f"{path}: header but no data")
    width = len(rows[0])
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows, start=1):
        if len(row) != width:
            raise UsageError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row, start=1):
            cell = cell.strip()
            if cell == "":
                raise UsageError(f"{path}: missing value at row {i}, column {j}")
            try:
                data[i - 1, j - 1] = float(cell)
            except ValueError:
                raise UsageError(f"{path}: non-numeric value {cell!r} at row {i}, column {j}") from None
    if not np.all(np.isfinite(data)):
        i, j = np.argwhere(~np.isfinite(data))[0]
        raise UsageError(f"{path}: non-finite value at row {i + 1}, column {j + 1}")
    return data


def write_matrix(path, M):
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"file not found: {path}")
    with path.open() as fh:
        return json.load(fh)


def _output_dir(args):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    return SolverConfig(tol=args.tol, max_iter=args.max_iter)


def _params(args):
    return OscarParams(args.lambda1, args.lambda2)


def edge_list(theta):
    """Nonzero strict-lower entries ranked by magnitude (rank 1 is largest)."""
    p = theta.shape[0]
    cols, rows = np.triu_indices(p, 1)
    vals = theta[rows, cols]
    keep = np.flatnonzero(vals != 0)
    order = keep[np.argsort(-np.abs(vals[keep]), kind="stable")]
    return [
        {"i": int(rows[k]), "j": int(cols[k]), "value": float(vals[k]), "rank": r}
        for r, k in enumerate(order, start=1)
    ]


def run_estimator(X, estimator, params, config, assembly, threads):
    if estimator == "gowl":
        S = sample_covariance(standardize(X))
        return estimate_gowl(S, oscar_weights(params, n_offdiag(S.matrix.shape[0])), config)
    return estimate_ccgowl(X, params, config, assembly=assembly, threads=threads)


def _write_estimate(out, est, args, params):
    write_matrix(out / "precision.csv", est.theta)
    write_json(out / "edges.json", edge_list(est.theta))
    meta = {
        "estimator": est.method,
        "lambda1": params.lambda1,
        "lambda2": params.lambda2,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "iterations": est.iterations,
        "final_gap": est.final_gap,
        "objective": est.objective,
        "converged": est.converged,
    }
    if est.method == "ccgowl":
        meta["assembly"] = est.info["assembly"]
        meta["positive_definite"] = est.info["positive_definite"]
        meta["column_iterations"] = est.info["column_iterations"]
    else:
        meta["stalled"] = est.info["stalled"]
    write_json(out / "metadata.json", meta)


# -- subcommands ------------------------------------------------------------

def cmd_estimate(args):
    X = read_matrix(args.input)
    params = _params(args)
    start = time.perf_counter()
    est = run_estimator(X, args.estimator, params, _config(args), args.assembly, args.threads)
    wall = time.perf_counter() - start
    out = _output_dir(args)
    _write_estimate(out, est, args, params)
    # wall time lives apart so the other outputs stay byte-reproducible
    write_json(out / "timing.json", {"wall_time_seconds": wall})
    logger.info("%s: %d iterations in %.3fs", est.method, est.iterations, wall)


def cmd_synth(args):
    cfg = SynthConfig(p=args.p, kappa=args.kappa, n=args.n, seed=args.seed, permute=args.permute)
    inst = make_instance(cfg)
    out = _output_dir(args)
    write_matrix(out / "X.csv", inst.X.data)
    write_matrix(out / "theta_star.csv", inst.truth.theta_star)
    write_matrix(out / "theta.csv", inst.theta)
    write_json(out / "labels.json", {
        "n_groups": inst.truth.n_groups,
        "blocks": inst.truth.blocks,
        "labels": inst.truth.labels.tolist(),
    })
    write_json(out / "config.json", {**cfg.to_dict(), "n_groups": cfg.n_groups})


def _load_truth(path):
    path = Path(path)
    theta_star = read_matrix(path / "theta_star.csv")
    meta = _read_json(path / "labels.json")
    return theta_star, np.asarray(meta["labels"], dtype=int), int(meta["n_groups"])


def cmd_eval(args):
    from .synth import GroundTruth

    if args.truth is None:
        raise UsageError("eval needs --truth (directory written by 'owlgraph synth')")
    theta_hat = read_matrix(args.input)
    theta_star, labels, G = _load_truth(args.truth)
    if theta_hat.shape != theta_star.shape:
        raise UsageError(f"dimension mismatch: estimate {theta_hat.shape}, truth {theta_star.shape}")
    cluster = read_matrix(args.cluster_input) if args.cluster_input else None
    if cluster is not None and cluster.shape != theta_star.shape:
        raise UsageError(f"dimension mismatch: cluster input {cluster.shape}, truth {theta_star.shape}")
    truth = GroundTruth(theta_star=theta_star, labels=labels, n_groups=G)
    components = args.groups if args.groups is not None else G + 1
    report = evaluate(theta_hat, truth, components=components, seed=args.seed, cluster_matrix=cluster)
    out = _output_dir(args)
    write_json(out / "report.json", {**report.to_dict(), "components": components})
    if args.heatmap:
        pred = gmm_cluster_entries(theta_hat if cluster is None else cluster, components, seed=args.seed)
        p = theta_hat.shape[0]
        cols, rows = np.triu_indices(p, 1)
        with open(out / "heatmap.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "j", "estimate", "truth", "true_label", "predicted_label"])
            est_v, true_v = vechs(theta_hat), vechs(theta_star)
            for k in range(rows.size):
                w.writerow([rows[k], cols[k], repr(float(est_v[k])), repr(float(true_v[k])),
                            labels[k], report.best_permutation.get(int(pred[k]), int(pred[k]))])


def cmd_cv(args):
    X = read_matrix(args.input)
    grid = default_grid(args.grid_size)
    if args.lambda1 is not None or args.lambda2 is not None:
        lam1 = [args.lambda1] if args.lambda1 is not None else sorted({g.lambda1 for g in grid})
        lam2 = [args.lambda2] if args.lambda2 is not None else sorted({g.lambda2 for g in grid})
        grid = [OscarParams(a, b) for a in lam1 for b in lam2]
    res = cross_validate(X, grid, folds=args.folds, estimator=args.estimator,
                         config=_config(args), seed=args.seed, threads=args.threads)
    out = _output_dir(args)
    write_json(out / "cv.json", {**res.to_dict(), "estimator": args.estimator, "folds": args.folds,
                                 "seed": args.seed})
    if args.refit:
        params = OscarParams(res.best_lambda1, res.best_lambda2)
        est = run_estimator(X, args.estimator, params, _config(args), args.assembly, args.threads)
        _write_estimate(out, est, args, params)


def machine_metadata():
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
    }


def cmd_bench(args):
    params = _params(args)
    config = _config(args)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.reps)
    runs, timings, kappas = [], [], {}
    for p in args.sizes:
        # blocks of at least ceil(0.1 p) variables only fit when kappa * p <= 10
        kappa = min(args.kappa, 10.0 / p)
        kappas[str(p)] = kappa
        for r in range(args.reps):
            inst = make_instance(SynthConfig(p=p, kappa=kappa, n=args.n, seed=int(seeds[r])))
            record = {"p": p, "replicate": r, "kappa": kappa}
            times = {"p": p, "replicate": r}
            for name in args.estimators:
                start = time.perf_counter()
                est = run_estimator(inst.X, name, params, config, args.assembly, args.threads)
                times[name] = time.perf_counter() - start
                record[name] = {"iterations": est.iterations, "converged": est.converged,
                                "objective": est.objective}
            runs.append(record)
            timings.append(times)
            logger.info("p=%d rep %d: %s", p, r, {k: v for k, v in times.items() if k in args.estimators})
    medians = {
        str(p): {name: float(np.median([t[name] for t in timings if t["p"] == p])) for name in args.estimators}
        for p in args.sizes
    }
    out = _output_dir(args)
    write_json(out / "bench.json", {
        "config": {"sizes": args.sizes, "reps": args.reps, "n": args.n, "kappa": args.kappa,
                   "effective_kappa": kappas, "lambda1": params.lambda1, "lambda2": params.lambda2, "tol": args.tol,
                   "max_iter": args.max_iter, "seed": args.seed, "threads": args.threads},
        "machine": machine_metadata(),
        "runs": runs,
    })
    write_json(out / "timing.json", {"median_seconds": medians, "runs": timings})


# -- argument parsing -------------------------------------------------------

def _nonneg(value):
    x = float(value)
    if not x >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {value}")
    return x


def _positive(value):
    x = float(value)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return x


def _positive_int(value):
    x = int(value)
    if x < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return x


def build_parser():
    parser = _Parser(prog="owlgraph", description="OWL-penalized precision matrix estimation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, solver=True):
        p.add_argument("--output-dir", default=".", help="directory for the output files")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=_positive_int, default=1)
        if solver:
            p.add_argument("--estimator", choices=("gowl", "ccgowl"), default="ccgowl")
            p.add_argument("--tol", type=_positive, default=1e-5)
            p.add_argument("--max-iter", type=_positive_int, default=500)
            p.add_argument("--assembly", choices=ASSEMBLY_MODES, default="scaled-average")

    p = sub.add_parser("estimate", help="estimate a precision matrix from an n x p data CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--lambda1", type=_nonneg, default=0.01)
    p.add_argument("--lambda2", type=_nonneg, default=0.001)
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("synth", help="generate a grouped synthetic dataset")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--kappa", type=_positive, default=0.1)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--permute", action="store_true", help="scatter block members over the variables")
    common(p, solver=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score an estimate against a synthetic ground truth")
    p.add_argument("--input", required=True, help="estimated precision matrix CSV")
    p.add_argument("--truth", help="directory written by 'owlgraph synth'")
    p.add_argument("--cluster-input", help="matrix to cluster instead of --input (e.g. a raw-beta estimate)")
    p.add_argument("--groups", type=_positive_int, help="GMM components (default: groups + 1)")
    p.add_argument("--heatmap", action="store_true", help="also write heatmap.csv")
    common(p, solver=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="select lambda1, lambda2 by K-fold cross-validation")
    p.add_argument("--input", required=True)
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--grid-size", type=_positive_int, default=20)
    p.add_argument("--lambda1", type=_nonneg, help="fix lambda1 and search only lambda2")
    p.add_argument("--lambda2", type=_nonneg, help="fix lambda2 and search only lambda1")
    p.add_argument("--refit", action="store_true", help="re-run the estimator at the best point")
    common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("bench", help="time the estimators on synthetic data")
    p.add_argument("--sizes", type=int, nargs="+", default=[100])
    p.add_argument("--reps", type=_positive_int, default=10)
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--kappa", type=_positive, default=0.1)
    p.add_argument("--lambda1", type=_nonneg, default=0.01)
    p.add_argument("--lambda2", type=_nonneg, default=1e-4)
    p.add_argument("--estimators", nargs="+", choices=("gowl", "ccgowl"), default=["ccgowl", "gowl"])
    common(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    level = os.environ.get("OWLGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SolverError as exc:
        print(f"owlgraph: solver failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"owlgraph: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
