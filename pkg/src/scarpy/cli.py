"""Command-line interface: ``scarpy fit | predict | simulate | bench``.

Exit codes::

    0  success (all fits converged, I/O valid)
    2  bad command-line usage
    3  malformed or out-of-support input data
    4  model schema or dimension mismatch
    5  a fit did not converge
    6  invalid simulation problem/family pairing
    7  index search failed (every draw rejected)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from .active_set import ConvergenceError, SolverOptions, fit_scmle
from .basis import DegenerateCoordinateError, parse_shapes
from .data import DataError, read_csv
from .family import DomainError, EfFamily
from .index import SearchError, fit_scaie
from .model import FittedModel, SchemaError, load, save
from .simulate import (PROBLEMS, ProblemError, SimConfig, default_jobs, rows_to_csv,
                       run_simulation, summary_json)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SCHEMA = 0, 2, 3, 4
EXIT_NOT_CONVERGED, EXIT_PROBLEM, EXIT_SEARCH = 5, 6, 7


class DimensionError(ValueError):
    pass


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_fit(args) -> int:
    family = EfFamily.from_name(args.family, args.T)
    covs = args.covariates.split(",") if args.covariates else None
    data, names = read_csv(args.data, args.response, covs, args.weights, args.trials,
                           args.successes)
    shapes = parse_shapes(args.shapes)
    opts = SolverOptions(eps_irls=args.eps_irls)
    t0 = time.perf_counter()
    if args.m is None:
        if len(shapes) != data.d:
            raise DimensionError(f"{len(shapes)} shape labels for {data.d} covariates")
        fit = fit_scmle(data, shapes, family, opts)
        ridge = fit
        meta = {}
    else:
        if len(shapes) != args.m:
            raise DimensionError(f"{len(shapes)} shape labels but m={args.m}")
        seed = _seed(args)
        fit = fit_scaie(data, shapes, family, N=args.N, delta=args.delta, refine=args.refine,
                        opts=opts, seed=seed, n_jobs=args.jobs)
        ridge = fit.ridge_fit
        meta = {"seed": seed, "N": args.N}
    seconds = time.perf_counter() - t0
    model = FittedModel.from_fit(fit, family, eta_cap=opts.eta_cap, covariates=names,
                                 eps_irls=args.eps_irls, **meta)
    if args.model_out:
        Path(args.model_out).write_bytes(save(model))
    mean, sat = model.predict_mean(data.X, return_saturated=True)
    report = {
        "loglik": ridge.loglik,
        "iterations": ridge.iterations,
        "converged": ridge.converged,
        "knot_counts": ridge.knot_counts,
        "saturation_count": int(sat.sum()),
        "degenerate_components": list(ridge.degenerate),
        "seconds": seconds,
        "fitted_mean": mean.tolist(),
    }
    if args.m is not None:
        report["index_matrix"] = model.index_matrix.tolist()
    _write(args.report_out, json.dumps(report, indent=1))
    return EXIT_OK if ridge.converged else EXIT_NOT_CONVERGED


def cmd_predict(args) -> int:
    model = load(Path(args.model).read_bytes())
    covs = args.covariates.split(",") if args.covariates else model.metadata.get("covariates")
    X = _read_matrix(args.data, covs)
    if X.shape[1] != model.d:
        raise DimensionError(f"model expects d={model.d} covariates, data has {X.shape[1]}")
    eta = model.predict_eta(X)
    mean, sat = model.predict_mean(X, return_saturated=True)
    out = [["row", "eta", "mean", "saturated"]]
    out += [[i + 1, repr(float(e)), repr(float(m)), int(s)]
            for i, (e, m, s) in enumerate(zip(eta, mean, sat))]
    text = "\n".join(",".join(map(str, r)) for r in out) + "\n"
    _write(args.out, text)
    return EXIT_OK


def _read_matrix(path, covariates) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        cols = list(range(len(header)))
        if covariates:
            missing = [c for c in covariates if c not in header]
            if missing:
                # fall back to positional columns when names differ
                if len(header) != len(covariates):
                    raise DimensionError(
                        f"model expects d={len(covariates)} covariates {covariates}, "
                        f"file has columns {header}")
            else:
                cols = [header.index(c) for c in covariates]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[k]) for k in cols])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(cols))


def cmd_simulate(args) -> int:
    seed = _seed(args)
    reps, n_mc = (50, 100_000) if args.full_scale else (args.reps, args.n_mc)
    rows = []
    for n in args.n:
        cfg = SimConfig(args.problem, args.family, n, reps, seed, n_mc, args.N, args.delta,
                        args.refine, args.eps_irls, args.timing)
        rows += run_simulation(cfg, n_jobs=args.jobs)
    _write(args.out, rows_to_csv(rows))
    if args.summary:
        _write(args.summary, summary_json(rows))
    ok = all(r["value"] == 1.0 for r in rows if r["metric"] == "converged")
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_bench(args) -> int:
    """Wall-clock fit times for one simulation problem over several ``n``."""
    seed = _seed(args)
    rows = []
    for n in args.n:
        cfg = SimConfig(args.problem, args.family, n, args.reps, seed, 1000, args.N,
                        record_time=True)
        rows += [r for r in run_simulation(cfg, n_jobs=1) if r["metric"] == "mise"]
    for r in rows:
        r["metric"] = "fit_seconds"
        r["value"] = r["seconds"]
    _write(args.out, rows_to_csv(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scarpy",
                                description="Shape-constrained generalised additive models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit an additive or index model to a CSV file")
    f.add_argument("--data", required=True)
    f.add_argument("--family", default="gaussian",
                   choices=["gaussian", "poisson", "binomial", "gamma"])
    f.add_argument("--shapes", required=True,
                   help="comma-separated labels 1-9 or aliases lin,in,de,cvx,cvxin,cvxde,"
                        "ccv,ccvin,ccvde")
    f.add_argument("--response", help="response column (a proportion for binomial)")
    f.add_argument("--successes", help="binomial success-count column (needs --trials)")
    f.add_argument("--trials", help="binomial trials column")
    f.add_argument("--T", type=int, default=1, help="binomial trials when constant")
    f.add_argument("--weights", help="observation weight column")
    f.add_argument("--covariates", help="comma-separated covariate columns (default: rest)")
    f.add_argument("--m", type=int, help="number of indices; enables the index model")
    f.add_argument("--N", type=int, default=100, help="stochastic searches (index model)")
    f.add_argument("--delta", type=float, help="eigenvalue floor (index model)")
    f.add_argument("--refine", action="store_true", help="local refinement (index model)")
    f.add_argument("--seed", type=int)
    f.add_argument("--eps-irls", type=float, default=1e-8)
    f.add_argument("--jobs", type=int, default=default_jobs())
    f.add_argument("--model-out")
    f.add_argument("--report-out", default="-")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict from a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--covariates")
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="reproduce the simulation problems")
    s.add_argument("--problem", type=int, required=True, choices=sorted(PROBLEMS))
    s.add_argument("--family", default="gaussian")
    s.add_argument("--n", type=int, nargs="+", default=[500])
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--n-mc", type=int, default=20_000)
    s.add_argument("--full-scale", action="store_true", help="50 reps and 1e5 MC points")
    s.add_argument("--N", type=int, default=100)
    s.add_argument("--delta", type=float)
    s.add_argument("--refine", action="store_true")
    s.add_argument("--eps-irls", type=float, default=1e-8)
    s.add_argument("--seed", type=int)
    s.add_argument("--timing", action="store_true",
                   help="record wall time in the seconds column (otherwise 0)")
    s.add_argument("--jobs", type=int, default=default_jobs())
    s.add_argument("--out", default="-")
    s.add_argument("--summary")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="time fits across sample sizes")
    b.add_argument("--problem", type=int, default=1, choices=sorted(PROBLEMS))
    b.add_argument("--family", default="gaussian")
    b.add_argument("--n", type=int, nargs="+", default=[200, 500, 1000])
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--N", type=int, default=20)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, DomainError, DegenerateCoordinateError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SchemaError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROBLEM
    except SearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
