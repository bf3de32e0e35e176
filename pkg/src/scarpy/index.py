"""Shape-constrained additive index models.

The index matrix ``A`` (d x m) is found by stochastic search: draw random
matrices satisfying the identifiability conditions, fit the additive model
on the projected covariates ``A^T x`` for each, and keep the best.  An
optional Nelder-Mead pass polishes the winner.

Identifiability conditions enforced on every candidate:

* each column has unit l1 norm;
* columns whose ridge label is 1, 4 or 7 have a positive first non-zero entry;
* columns with ridge label 1 are orthogonal to every other column.

When the ridge shapes admit a perfect fit (``saturated_risk``), candidates
with ``lambda_min(A^T A) < delta`` are rejected.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .active_set import AdditiveFit, SolverOptions, fit_scmle
from .basis import LINEAR, validate_shapes
from .data import Dataset
from .family import EfFamily

log = logging.getLogger(__name__)

SIGN_FIXED = frozenset({1, 4, 7})
DEFAULT_DELTA = 0.1
MAX_REDRAWS = 100_000


class SearchError(RuntimeError):
    pass


def saturated_risk(shapes) -> bool:
    """True when the ridge shapes allow interpolating fits for some ``A``."""
    shapes = tuple(shapes)
    if len(shapes) == 1:
        return False
    s = set(shapes)
    return not (s <= {1, 4, 5, 6} or s <= {1, 7, 8, 9})


def project_identifiable(A, shapes) -> np.ndarray:
    """Map an arbitrary d x m matrix onto the identifiability set.

    Linear-ridge columns are orthonormalised among themselves and removed
    from the other columns; then each column is l1-normalised and
    sign-fixed where the ridge label requires it.  Raises ``ValueError`` if
    a column vanishes.
    """
    A = np.array(A, dtype=float, copy=True)
    if A.ndim == 1:
        A = A[:, None]
    lin = [j for j, s in enumerate(shapes) if s == LINEAR]
    basis = []
    for j in lin:
        v = A[:, j].copy()
        for u in basis:
            v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv < 1e-10:
            raise ValueError("degenerate linear index column")
        basis.append(v / nv)
        A[:, j] = v
    for _ in range(2):  # second pass mops up rounding
        for j in range(A.shape[1]):
            if j in lin:
                continue
            for u in basis:
                A[:, j] -= (u @ A[:, j]) * u
    for j, label in enumerate(shapes):
        norm = np.abs(A[:, j]).sum()
        if not norm > 1e-10:
            raise ValueError("degenerate index column")
        A[:, j] /= norm
        if label in SIGN_FIXED:
            nz = np.flatnonzero(A[:, j])
            if nz.size and A[nz[0], j] < 0:
                A[:, j] = -A[:, j]
    return A


def min_eigenvalue(A) -> float:
    A = np.asarray(A, dtype=float)
    return float(np.linalg.eigvalsh(A.T @ A)[0])


def rejection_check(A, shapes, delta: float) -> bool:
    """Accept ``A`` unless the shapes risk saturation and ``A`` is too flat."""
    if not saturated_risk(shapes):
        return True
    return min_eigenvalue(A) >= delta


def _orthogonality_residual(A, shapes) -> float:
    lin = [j for j, s in enumerate(shapes) if s == LINEAR]
    G = A.T @ A
    res = 0.0
    for k in lin:
        for j in range(A.shape[1]):
            if j != k:
                res = max(res, abs(G[j, k]))
    return res


def sample_index_matrix(d: int, m: int, shapes, rng: np.random.Generator,
                        mask=None) -> np.ndarray:
    """Draw one random index matrix satisfying the identifiability conditions.

    ``mask`` (d x m booleans) optionally forces entries to zero.
    """
    if m > d:
        raise ValueError("m must not exceed d")
    for _ in range(1000):
        A = rng.standard_normal((d, m))
        if mask is not None:
            A = np.where(mask, A, 0.0)
        try:
            return project_identifiable(A, shapes)
        except ValueError:
            continue
    raise SearchError("could not draw a non-degenerate index matrix")


def _draw_accepted(d, m, shapes, delta, rng, mask):
    for _ in range(MAX_REDRAWS):
        A = sample_index_matrix(d, m, shapes, rng, mask)
        if rejection_check(A, shapes, delta):
            return A
    return None


def index_loglik(A, data: Dataset, shapes, family: EfFamily,
                 opts: SolverOptions | None = None):
    """Objective of the best additive fit on the projected covariates."""
    fit = fit_scmle(data.project(A), shapes, family, opts)
    return fit.loglik, fit


@dataclass(frozen=True)
class IndexFit:
    index_matrix: np.ndarray
    ridge_fit: AdditiveFit
    delta: float
    search_log: tuple
    refined: bool = False
    orthogonality_residual: float = 0.0

    @property
    def loglik(self) -> float:
        return self.ridge_fit.loglik

    def predict_eta(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.index_matrix.shape[0]:
            raise ValueError(
                f"expected {self.index_matrix.shape[0]} columns, got {X.shape[1]}")
        return self.ridge_fit.predict_eta(X @ self.index_matrix)


def _evaluate(args):
    k, A, data, shapes, family, opts = args
    if A is None:
        return k, -np.inf
    try:
        value, _ = index_loglik(A, data, shapes, family, opts)
    except Exception as exc:  # a failed candidate is simply not selected
        log.debug("candidate %d failed: %s", k, exc)
        value = -np.inf
    return k, value


def fit_scaie(data: Dataset, shapes, family: EfFamily, N: int = 100,
              delta: float | None = None, refine: bool = False,
              opts: SolverOptions | None = None, seed: int = 0,
              n_jobs: int = 1, mask=None, refine_budget: int = 200) -> IndexFit:
    """Shape-constrained additive index fit by stochastic search."""
    shapes = tuple(int(s) for s in shapes)
    validate_shapes(shapes)
    d, m = data.d, len(shapes)
    if m > d:
        raise ValueError(f"m={m} exceeds the number of covariates d={d}")
    if N < 1:
        raise ValueError("N must be at least 1")
    opts = opts or SolverOptions()
    risk = saturated_risk(shapes)
    if risk:
        delta = DEFAULT_DELTA if delta is None else float(delta)
        if not delta > 0:
            raise ValueError("delta must be positive for these shapes")
    else:
        delta = 0.0
    data.check_support(family)

    streams = np.random.SeedSequence(seed).spawn(N)
    mats = [_draw_accepted(d, m, shapes, delta, np.random.Generator(np.random.Philox(s)), mask)
            for s in streams]
    if all(A is None for A in mats):
        raise SearchError("every draw was rejected; try a smaller delta")
    tasks = [(k, A, data, shapes, family, opts) for k, A in enumerate(mats)]
    if n_jobs == 1:
        results = [_evaluate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=None if n_jobs < 1 else n_jobs) as ex:
            results = list(ex.map(_evaluate, tasks, chunksize=max(1, N // 32)))
    values = np.full(N, -np.inf)
    for k, v in results:
        values[k] = v
    best = int(np.argmax(values))  # first index wins ties
    if not np.isfinite(values[best]):
        raise SearchError("no candidate index matrix produced a finite fit")
    A_best, L_best = mats[best], float(values[best])

    refined = False
    if refine:
        A_ref, L_ref = _refine(A_best, L_best, data, shapes, family, opts, delta, mask,
                               refine_budget)
        if L_ref > L_best:
            A_best, L_best, refined = A_ref, L_ref, True

    _, ridge = index_loglik(A_best, data, shapes, family, opts)
    return IndexFit(A_best, ridge, delta, tuple(float(v) for v in values), refined,
                    _orthogonality_residual(A_best, shapes))


def _refine(A0, L0, data, shapes, family, opts, delta, mask, budget):
    d, m = A0.shape
    best = [A0, L0]

    def neg(theta):
        A = theta.reshape(d, m)
        if mask is not None:
            A = np.where(mask, A, 0.0)
        try:
            A = project_identifiable(A, shapes)
        except ValueError:
            return np.inf
        if not rejection_check(A, shapes, delta):
            return np.inf
        try:
            value, _ = index_loglik(A, data, shapes, family, opts)
        except Exception:
            return np.inf
        if value > best[1]:
            best[0], best[1] = A, value
        return -value

    step = 0.05
    simplex = [A0.ravel()]
    for k in range(d * m):
        v = A0.ravel().copy()
        v[k] += step
        simplex.append(v)
    optimize.minimize(neg, A0.ravel(), method="Nelder-Mead",
                      options={"maxfev": budget, "initial_simplex": np.array(simplex),
                               "xatol": 1e-6, "fatol": 1e-12})
    return best[0], best[1]


def amari_distance(A_est, A0) -> float:
    """Amari distance between two square index matrices, in ``[0, d-1]``."""
    A_est = np.atleast_2d(np.asarray(A_est, dtype=float))
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    if A_est.shape != A0.shape or A0.shape[0] != A0.shape[1]:
        raise ValueError("amari_distance needs two square matrices of equal size")
    try:
        C = np.abs(A_est @ np.linalg.inv(A0))
    except np.linalg.LinAlgError:
        raise ValueError("reference matrix is singular") from None
    if np.linalg.cond(A0) > 1e14:
        raise ValueError("reference matrix is singular")
    d = C.shape[0]
    rows = (C.sum(axis=1) / C.max(axis=1) - 1).sum()
    cols = (C.sum(axis=0) / C.max(axis=0) - 1).sum()
    return float((rows + cols) / (2 * d))
