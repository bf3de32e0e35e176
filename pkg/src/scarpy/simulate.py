"""Simulation problems, Monte Carlo MISE and prediction-error harness.

Problems 1-3 are additive (d = 4, 4, 8) and come in Gaussian, Poisson and
Binomial flavours; Problems 4 and 5 are Gaussian index models.  Covariates
are uniform on ``[-1, 1]^d``.  All randomness comes from Philox generators
seeded through :class:`numpy.random.SeedSequence`, so a seed fully determines
a run.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .active_set import SolverOptions, fit_scmle
from .data import Dataset
from .family import EfFamily, Kind
from .index import amari_distance, fit_scaie
from .model import FittedModel

MC_HALF_WIDTH = 0.98
NOISE_SD = 0.5
PROBLEM_FAMILIES = {
    1: {"gaussian", "poisson", "binomial"},
    2: {"gaussian", "poisson", "binomial"},
    3: {"gaussian", "poisson", "binomial"},
    4: {"gaussian"},
    5: {"gaussian"},
}
CSV_COLUMNS = ["problem", "family", "n", "rep", "metric", "value", "seconds"]
THREADS_ENV = "SCARPY_THREADS"


class ProblemError(ValueError):
    pass


def rng_from(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def _cvx1(X):
    return np.abs(X[:, 0]) + np.abs(X[:, 1]) + np.abs(X[:, 2]) ** 3 + np.abs(X[:, 3]) ** 3


def _cvx2(X):
    P = np.maximum(X, 0.0)
    return P[:, 0] + P[:, 1] + P[:, 2] ** 3 + P[:, 3] ** 3


def truth_p1(X):
    return _cvx1(np.atleast_2d(X))


def truth_p2(X):
    return _cvx2(np.atleast_2d(X))


def truth_p3(X):
    X = np.atleast_2d(X)
    return _cvx1(X[:, :4]) + _cvx2(X[:, 4:8])


def truth_p4(X):
    X = np.atleast_2d(X)
    return np.abs(X @ np.full(4, 0.25))


def truth_p5(X):
    X = np.atleast_2d(X)
    z = X @ A0_P5
    return z[:, 0] ** 2 - np.abs(z[:, 1]) ** 3


A0_P4 = np.full((4, 1), 0.25)
A0_P5 = np.array([[0.5, 0.5], [0.5, -0.5]])

PROBLEMS = {
    1: dict(d=4, shapes=(4, 4, 4, 4), truth=truth_p1, A0=None),
    2: dict(d=4, shapes=(5, 5, 5, 5), truth=truth_p2, A0=None),
    3: dict(d=8, shapes=(4, 4, 4, 4, 5, 5, 5, 5), truth=truth_p3, A0=None),
    4: dict(d=4, shapes=(4,), truth=truth_p4, A0=A0_P4),
    5: dict(d=2, shapes=(4, 7), truth=truth_p5, A0=A0_P5),
}


@dataclass(frozen=True)
class ProblemSpec:
    id: int
    n: int
    family: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.id not in PROBLEMS:
            raise ProblemError(f"unknown problem {self.id}; choose 1-5")
        if self.family not in PROBLEM_FAMILIES[self.id]:
            raise ProblemError(f"problem {self.id} is not defined for the {self.family} family")
        if self.n < 2:
            raise ProblemError("n must be at least 2")


@dataclass(frozen=True)
class Problem:
    data: Dataset
    truth: Callable
    shapes: tuple
    A0: np.ndarray | None
    family: EfFamily

    @property
    def is_index(self) -> bool:
        return self.A0 is not None


def gen_problem(spec: ProblemSpec) -> Problem:
    cfg = PROBLEMS[spec.id]
    rng = rng_from(spec.seed)
    d = cfg["d"]
    X = rng.uniform(-1.0, 1.0, size=(spec.n, d))
    f = cfg["truth"](X)
    family = EfFamily.from_name(spec.family)
    trials = None
    if family.kind is Kind.GAUSSIAN:
        y = f + NOISE_SD * rng.standard_normal(spec.n)
    elif family.kind is Kind.POISSON:
        y = rng.poisson(np.exp(f)).astype(float)
    else:
        trials = rng.integers(11, 21, size=spec.n).astype(float)
        p = 1.0 / (1.0 + np.exp(-f))
        y = rng.binomial(trials.astype(np.int64), p) / trials
    return Problem(Dataset(X, y, trials=trials), cfg["truth"], cfg["shapes"], cfg["A0"], family)


# ----------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MiseEstimate:
    average: float     # plain mean of the squared error over the cube
    integral: float    # average times the cube's volume
    std_error: float   # Monte Carlo standard error of ``average``


def mise_estimate(predict, truth, d: int, n_mc: int, seed, half_width: float = MC_HALF_WIDTH,
                  chunk: int = 50_000) -> MiseEstimate:
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    rng = rng_from(seed)
    total = total_sq = 0.0
    done = 0
    while done < n_mc:
        k = min(chunk, n_mc - done)
        Z = rng.uniform(-half_width, half_width, size=(k, d))
        err = (np.asarray(predict(Z)) - truth(Z)) ** 2
        total += float(err.sum())
        total_sq += float((err ** 2).sum())
        done += k
    avg = total / n_mc
    var = max(total_sq / n_mc - avg * avg, 0.0)
    se = math.sqrt(var / n_mc)
    vol = (2 * half_width) ** d
    return MiseEstimate(avg, avg * vol, se)


def estimate_mise(model, truth, d: int, n_mc: int = 20_000, seed=0,
                  scale: str = "volume") -> float:
    """Monte Carlo integrated squared error of ``model`` over ``[-0.98, 0.98]^d``.

    ``scale="volume"`` returns the integral (average times cube volume),
    the usual MISE convention; ``"average"``
    returns the plain mean squared error.
    """
    predict = model.predict_eta if hasattr(model, "predict_eta") else model
    est = mise_estimate(predict, truth, d, n_mc, seed)
    if scale == "volume":
        return est.integral
    if scale == "average":
        return est.average
    raise ValueError(f"unknown scale {scale!r}")


def rmspe_split_eval(data: Dataset, fitter, train_frac: float = 0.7, reps: int = 10,
                     seed=0) -> float:
    """Mean held-out RMSPE over random train/validation splits.

    ``fitter`` maps a training :class:`Dataset` to an object with a
    ``predict_mean`` method.
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    if reps < 1:
        raise ValueError("reps must be positive")
    n = data.n
    n_train = int(round(train_frac * n))
    if n_train < 2 or n - n_train < 1:
        raise ValueError("split leaves an empty training or validation set")
    rng = rng_from(seed)
    errs = []
    for _ in range(reps):
        perm = rng.permutation(n)
        tr, va = perm[:n_train], perm[n_train:]
        model = fitter(data.subset(tr))
        pred = model.predict_mean(data.X[va])
        errs.append(math.sqrt(float(np.mean((pred - data.y[va]) ** 2))))
    return float(np.mean(errs))


def _alpha_error(alpha, alpha0, label=None) -> float:
    alpha = np.ravel(alpha)
    alpha0 = np.ravel(alpha0)
    if alpha.shape != alpha0.shape:
        raise ValueError("index vectors differ in dimension")
    err = float(np.sum((alpha - alpha0) ** 2))
    if label is not None and label not in (1, 4, 7):
        err = min(err, float(np.sum((alpha + alpha0) ** 2)))
    return err


def index_rmse(fits, alpha0) -> float:
    """Root mean squared l2 error of single-index estimates."""
    errs = []
    for fit in fits:
        A = np.asarray(fit.index_matrix if hasattr(fit, "index_matrix") else fit)
        if A.ndim == 2 and A.shape[1] != 1:
            raise ValueError("index_rmse needs single-index fits")
        label = fit.ridge_fit.shapes[0] if hasattr(fit, "ridge_fit") else None
        errs.append(_alpha_error(A, alpha0, label))
    return math.sqrt(float(np.mean(errs)))


# ----------------------------------------------------------------------
# harness


@dataclass(frozen=True)
class SimConfig:
    problem: int
    family: str = "gaussian"
    n: int = 500
    reps: int = 10
    seed: int = 0
    n_mc: int = 20_000
    N: int = 100
    delta: float | None = None
    refine: bool = False
    eps_irls: float = 1e-8
    record_time: bool = False


def _one_rep(args):
    cfg, rep, seq = args
    gen_seed, mc_seed, search_seed = seq.spawn(3)
    prob = gen_problem(ProblemSpec(cfg.problem, cfg.n, cfg.family, gen_seed))
    opts = SolverOptions(eps_irls=cfg.eps_irls)
    t0 = time.perf_counter()
    if prob.is_index:
        fit = fit_scaie(prob.data, prob.shapes, prob.family, N=cfg.N, delta=cfg.delta,
                        refine=cfg.refine, opts=opts,
                        seed=int(search_seed.generate_state(1)[0]))
    else:
        fit = fit_scmle(prob.data, prob.shapes, prob.family, opts)
    seconds = time.perf_counter() - t0 if cfg.record_time else 0.0
    d = prob.data.d
    est = mise_estimate(fit.predict_eta, prob.truth, d, cfg.n_mc, mc_seed)
    metrics = [("mise", est.integral), ("mise_avg", est.average)]
    if cfg.problem == 4:
        metrics.append(("index_sqerr", _alpha_error(fit.index_matrix, prob.A0, prob.shapes[0])))
    elif cfg.problem == 5:
        metrics.append(("amari", amari_distance(fit.index_matrix, prob.A0)))
    ridge = fit.ridge_fit if prob.is_index else fit
    metrics.append(("converged", float(ridge.converged)))
    return [dict(problem=cfg.problem, family=cfg.family, n=cfg.n, rep=rep, metric=k,
                 value=float(v), seconds=seconds) for k, v in metrics]


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_simulation(cfg: SimConfig, n_jobs: int | None = None) -> list[dict]:
    """Run ``cfg.reps`` replications; rows come back ordered by replication."""
    ProblemSpec(cfg.problem, cfg.n, cfg.family)  # validate early
    n_jobs = default_jobs() if n_jobs is None else n_jobs
    seqs = np.random.SeedSequence([cfg.seed, cfg.problem, cfg.n]).spawn(cfg.reps)
    tasks = [(cfg, rep, s) for rep, s in enumerate(seqs)]
    if n_jobs > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            chunks = list(ex.map(_one_rep, tasks))
    else:
        chunks = [_one_rep(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize(rows) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["problem"], r["family"], r["n"], r["metric"]), []).append(r["value"])
    out = []
    for (problem, family, n, metric), vals in sorted(groups.items()):
        v = np.array(vals)
        entry = dict(problem=problem, family=family, n=n, metric=metric, reps=len(v),
                     mean=float(v.mean()), sd=float(v.std(ddof=1)) if len(v) > 1 else 0.0)
        if metric == "index_sqerr":
            entry["rmse"] = math.sqrt(float(v.mean()))
        out.append(entry)
    return {"results": out}


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": repr(float(r["value"])), "seconds": repr(float(r["seconds"]))})
    return buf.getvalue()


def summary_json(rows) -> str:
    return json.dumps(summarize(rows), indent=2, sort_keys=True)


def fitted_model(fit, family: EfFamily, **meta) -> FittedModel:
    return FittedModel.from_fit(fit, family, **meta)
