"""Active-set computation of the shape-constrained maximum likelihood fit.

The fit is a weighted sum of hinge/step basis functions (see
:mod:`scarpy.basis`) plus an intercept and linear terms, maximising the
scaled partial log-likelihood over the cone of admissible weights.  The
outer loop grows a working set one basis element at a time, choosing the
element with the largest directional derivative.  The inner loop solves the
unconstrained GLM on the working set by IRLS and, when some constrained
weight leaves the cone, backtracks along the segment from the previous
iterate (the moving ratio) and drops the offending elements.

Directional derivatives for all ``n*d`` candidates are computed in ``O(nd)``
from cumulative residual sums over the pre-sorted knots.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import (FREE_FIRST_LABELS, LINEAR, ComponentFit, ComponentKnots,
                    build_bases, component_eval)
from .data import Dataset
from .family import EfFamily, Kind

log = logging.getLogger(__name__)

Key = tuple  # (i, j): i == 0 is the linear basis of coordinate j, i >= 1 the (i-1)-th knot


class ConvergenceError(RuntimeError):
    """IRLS could not make progress; ``partial`` holds the last iterate if any."""

    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    eps_irls: float = 1e-8
    max_outer_iters: int | None = None
    max_irls_iters: int = 100
    eta_cap: float = 30.0
    # Gaussian fits stop once no candidate derivative exceeds this; exact
    # arithmetic would use 0.
    gaussian_tol: float = 1e-11

    def __post_init__(self):
        for name in ("eps_irls", "max_irls_iters", "eta_cap", "gaussian_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer_iters is not None and self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be positive")

    def outer_cap(self, n: int, n_nonlinear: int) -> int:
        if self.max_outer_iters is not None:
            return self.max_outer_iters
        return max(10, min(2 * n * max(n_nonlinear, 1), 10000))


@dataclass
class WorkingSet:
    """Ordered working set; ``fixed`` members (S1) are never dropped."""

    fixed: list
    free: list = field(default_factory=list)

    @property
    def members(self) -> list:
        return self.fixed + self.free

    def __contains__(self, key) -> bool:
        return key in self.fixed or key in self.free

    def __len__(self) -> int:
        return len(self.fixed) + len(self.free)


def initial_working_set(shapes) -> WorkingSet:
    fixed = []
    for j, label in enumerate(shapes):
        if label == LINEAR:
            fixed.append((0, j))
        elif label in FREE_FIRST_LABELS:
            fixed.append((1, j))
    return WorkingSet(fixed)


@dataclass(frozen=True)
class AdditiveFit:
    """Result of :func:`fit_scmle`.

    ``fitted_eta`` is clipped to ``[-eta_cap, eta_cap]`` for Poisson and
    Binomial fits, with ``saturated`` marking the clipped entries.
    ``history`` is the objective after each accepted outer iteration.
    """

    shapes: tuple
    components: tuple
    intercept: float
    fitted_eta: np.ndarray
    saturated: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    history: tuple = ()
    degenerate: tuple = ()

    def predict_eta(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.components):
            raise ValueError(f"expected {len(self.components)} columns, got {X.shape[1]}")
        eta = np.full(X.shape[0], self.intercept)
        for j, comp in enumerate(self.components):
            eta += component_eval(comp, X[:, j])
        return eta

    @property
    def knot_counts(self) -> list[int]:
        """Active knots per component; linear components have none."""
        return [0 if c.label == LINEAR else c.n_active for c in self.components]


# ----------------------------------------------------------------------
# design


class Design:
    """Basis columns of one dataset, evaluated lazily and cached.

    The full weight vector is laid out as ``[intercept, coord 0, coord 1, ...]``
    where a linear coordinate contributes one slope and a shape-constrained
    coordinate one weight per knot.
    """

    def __init__(self, data: Dataset, shapes, family: EfFamily):
        self.data = data
        self.shapes = tuple(int(s) for s in shapes)
        self.family = family
        self.bases = build_bases(data.X, self.shapes)
        self.y = data.y
        self.omega = data.effective_weights(family)
        self.n = data.n
        self._cache: dict = {}
        sizes = [1 if b.label == LINEAR else b.size for b in self.bases]
        self.offsets = np.concatenate([[1], 1 + np.cumsum(sizes)]).astype(int)
        self.dim = int(self.offsets[-1])

    def column(self, key: Key) -> np.ndarray:
        col = self._cache.get(key)
        if col is None:
            i, j = key
            x = self.data.X[:, j]
            col = x.copy() if i == 0 else self.bases[j].column(i - 1, x)
            self._cache[key] = col
        return col

    def matrix(self, keys) -> np.ndarray:
        Z = np.empty((self.n, 1 + len(keys)))
        Z[:, 0] = 1.0
        for c, key in enumerate(keys):
            Z[:, c + 1] = self.column(key)
        return Z

    def flat_index(self, key: Key) -> int:
        i, j = key
        return int(self.offsets[j] + (0 if i == 0 else i - 1))

    def eta(self, w) -> np.ndarray:
        """Linear predictor for a full weight vector."""
        w = np.asarray(w, dtype=float)
        eta = np.full(self.n, w[0])
        X = self.data.X
        for j, b in enumerate(self.bases):
            seg = w[self.offsets[j]:self.offsets[j + 1]]
            if b.label == LINEAR:
                eta += seg[0] * X[:, j]
            else:
                for i in np.flatnonzero(seg):
                    eta += seg[i] * b.column(i, X[:, j])
        return eta

    def psi(self, w) -> float:
        return objective(self.family, self.eta(w), self.y, self.omega)

    def gradient(self, w) -> np.ndarray:
        """Analytic gradient of the objective at a full weight vector."""
        eta = self.eta(w)
        r = self.omega * (self.y - self.family.inv_link(eta))
        g = np.empty(self.dim)
        g[0] = r.sum() / self.n
        D = compute_derivatives(r, self.bases)
        for j, b in enumerate(self.bases):
            if b.label == LINEAR:
                g[self.offsets[j]] = r @ self.data.X[:, j] / self.n
            else:
                g[self.offsets[j]:self.offsets[j + 1]] = D[j]
                if b.label in FREE_FIRST_LABELS:
                    g[self.offsets[j]] = r @ self.data.X[:, j] / self.n
        return g

    def in_cone(self, w) -> bool:
        for j, b in enumerate(self.bases):
            if b.label == LINEAR:
                continue
            seg = w[self.offsets[j]:self.offsets[j + 1]]
            if b.label in FREE_FIRST_LABELS:
                seg = seg[1:]
            if np.any(seg < 0):
                return False
        return True


def objective(family: EfFamily, eta, y, omega) -> float:
    terms = family.unit_loglik(eta, y)
    if np.any(terms == -np.inf):
        return -math.inf
    return float(omega @ terms / len(y))


# ----------------------------------------------------------------------
# derivatives


def compute_derivatives(residuals, bases) -> list[np.ndarray]:
    """Directional derivatives ``D[j][i] = (1/n) sum_u r_u g_ij(X_uj)``.

    ``residuals`` are the (likelihood-weighted) nominal residuals
    ``omega_u * (y_u - mu_u)``.  For each coordinate the residuals are summed
    per knot and the derivatives follow from cumulative sums along the
    sorted knots, so the cost is linear in ``n``.  The recurrences are exact
    even when the residuals do not sum to zero (i.e. away from an IRLS
    optimum): the total residual enters through the centring constants.

    Returns one array per coordinate (empty for linear coordinates).
    """
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    out = []
    for b in bases:
        if b.label == LINEAR:
            out.append(np.empty(0))
            continue
        t = b.knots
        K = t.size
        rho = np.bincount(b.ranks, weights=r, minlength=K)
        S = rho.sum()
        C = np.cumsum(rho)
        C_prev = np.concatenate([[0.0], C[:-1]])
        gaps = np.diff(t)
        label = b.label
        if label == 2:
            nD = S - C_prev - np.where(t <= 0, S, 0.0)
        elif label == 3:
            nD = C_prev - np.where(t > 0, S, 0.0)
        elif label in (4, 5, 7, 9):
            # backward recursion: nD_i = nD_{i+1} + (S - C_i) * gap_i
            A = (S - C[:-1]) * gaps
            tail = np.concatenate([np.cumsum(A[::-1])[::-1], [0.0]])
            corr = np.where(t <= 0, t * S, 0.0)
            nD = tail + corr if label in (4, 5) else -tail - corr
        else:
            # forward recursion: nD_i = nD_{i-1} + C_{i-1} * gap_{i-1}
            head = np.concatenate([[0.0], np.cumsum(C[:-1] * gaps)])
            corr = np.where(t >= 0, t * S, 0.0)
            nD = head - corr if label == 6 else -head + corr
        out.append(nD / n)
    return out


# ----------------------------------------------------------------------
# moving ratio and stopping


def moving_ratio(w_star, w_new, constrained=None):
    """Backtracking factor towards the cone boundary and the elements to drop.

    ``w_star`` and ``w_new`` are aligned weight vectors over the working set;
    ``constrained`` masks the members subject to a sign constraint (all by
    default).  Returns ``(p, drop)`` with ``drop`` a list of indices.
    """
    w_star = np.atleast_1d(np.asarray(w_star, dtype=float))
    w_new = np.atleast_1d(np.asarray(w_new, dtype=float))
    if constrained is None:
        constrained = np.ones(w_star.shape, dtype=bool)
    viol = np.flatnonzero(np.asarray(constrained) & (w_new <= 0))
    if viol.size == 0:
        raise ContractError("moving_ratio called without cone violations")
    denom = w_star[viol] - w_new[viol]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(denom > 0, w_star[viol] / denom, 0.0)
    p = float(ratios.min())
    drop = [int(k) for k, q in zip(viol, ratios) if q == p]
    return p, drop


@dataclass(frozen=True)
class Stop:
    reason: str


@dataclass(frozen=True)
class Add:
    key: Key
    value: float


def stopping_check(D, candidates, history, opts: SolverOptions, family: EfFamily):
    """Decide whether the outer loop stops or which element to add.

    ``D`` is the per-coordinate derivative list and ``candidates`` a matching
    list of boolean masks.  Ties go to the smallest ``(j, i)``.
    """
    best = -math.inf
    best_key = None
    for j, (dj, mj) in enumerate(zip(D, candidates)):
        if dj.size == 0 or not mj.any():
            continue
        vals = np.where(mj, dj, -np.inf)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, best_key = float(vals[i]), (i + 1, j)
    if best_key is None:
        return Stop("no candidates")
    if family.kind is Kind.GAUSSIAN:
        if best <= opts.gaussian_tol:
            return Stop("kkt")
    else:
        if best < opts.eps_irls:
            return Stop("kkt")
        if len(history) >= 2 and history[-1] <= history[-2]:
            return Stop("objective stalled")
    return Add(best_key, best)


# ----------------------------------------------------------------------
# IRLS


def _initial_intercept(data: Dataset, family: EfFamily, omega) -> float:
    ybar = float(omega @ data.y / omega.sum())
    n = data.n
    if family.kind is Kind.BINOMIAL:
        T = family.trials if data.trials is None else float(np.mean(data.trials))
        lo = 1.0 / (2 * n * T)
        ybar = min(max(ybar, lo), 1 - lo)
    elif family.kind is Kind.POISSON:
        ybar = max(ybar, 1.0 / (2 * n))
    return float(family.link(ybar))


def _irls(Z, y, omega, family: EfFamily, beta0, opts: SolverOptions):
    """Newton-Raphson with step halving for the canonical-link GLM on ``Z``.

    Returns ``(beta, eta, objective)``.
    """
    n = Z.shape[0]
    if family.kind is Kind.GAUSSIAN:
        sw = np.sqrt(omega)
        beta, _, rank, _ = linalg.lstsq(Z * sw[:, None], y * sw, lapack_driver="gelsd")
        if rank < Z.shape[1]:
            log.warning("rank-deficient working set (rank %d of %d); "
                        "using minimum-norm solution", rank, Z.shape[1])
        eta = Z @ beta
        return beta, eta, objective(family, eta, y, omega)

    beta = np.asarray(beta0, dtype=float).copy()
    eta = Z @ beta
    obj = objective(family, eta, y, omega)
    if not np.isfinite(obj):
        raise ConvergenceError("IRLS started from an infeasible point")
    gamma = family.kind is Kind.GAMMA
    for _ in range(opts.max_irls_iters):
        mu = family.inv_link(eta)
        r = omega * (y - mu)
        grad = Z.T @ r / n
        if np.max(np.abs(grad)) < opts.eps_irls:
            break
        v = omega * family.variance(eta)
        sv = np.sqrt(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(sv > 0, r / sv, 0.0)
        step, *_ = linalg.lstsq(Z * sv[:, None], z, lapack_driver="gelsd")
        dz = Z @ step
        t = 1.0
        for _halving in range(31):
            cand = eta + t * dz
            if gamma and cand.max() > -1e-10:
                t *= 0.5
                continue
            cobj = objective(family, cand, y, omega)
            if cobj >= obj - 1e-14 * max(1.0, abs(obj)):
                break
            t *= 0.5
        else:
            # predicted ascent below the objective's rounding level: converged
            if grad @ step <= 1e-11 * max(1.0, abs(obj)):
                break
            raise ConvergenceError("IRLS failed to improve after 30 step halvings",
                                   partial=beta)
        beta = beta + t * step
        eta = Z @ beta
        gain = cobj - obj
        obj = cobj
        if gain <= 1e-15 * max(1.0, abs(obj)) and np.max(np.abs(t * dz)) < 1e-12:
            break
    return beta, eta, obj


def irls_solve(data: Dataset, family: EfFamily, working, warm=None,
               opts: SolverOptions | None = None, shapes=None):
    """Unconstrained GLM fit restricted to the working set.

    ``working`` is a :class:`WorkingSet` (or a list of keys); ``warm`` maps
    keys to starting weights and may include ``"intercept"``.  Returns a dict
    of weights keyed like ``warm``.
    """
    opts = opts or SolverOptions()
    keys = working.members if isinstance(working, WorkingSet) else list(working)
    if shapes is None:
        shapes = tuple(1 for _ in range(data.d))
    design = Design(data, shapes, family)
    Z = design.matrix(keys)
    warm = warm or {}
    omega = design.omega
    beta0 = np.zeros(Z.shape[1])
    beta0[0] = warm.get("intercept", _initial_intercept(data, family, omega))
    for c, key in enumerate(keys):
        beta0[c + 1] = warm.get(key, 0.0)
    beta, _, _ = _irls(Z, data.y, omega, family, beta0, opts)
    out = {"intercept": float(beta[0])}
    out.update({key: float(b) for key, b in zip(keys, beta[1:])})
    return out


# ----------------------------------------------------------------------
# main loop


def fit_scmle(data: Dataset, shapes, family: EfFamily,
              opts: SolverOptions | None = None) -> AdditiveFit:
    """Shape-constrained maximum likelihood fit of an additive model."""
    opts = opts or SolverOptions()
    shapes = tuple(int(s) for s in shapes)
    data.check_support(family)
    design = Design(data, shapes, family)
    bases = design.bases
    y, omega, n = design.y, design.omega, design.n

    ws = initial_working_set(shapes)
    cand_masks = [b.candidate_mask() if b.label != LINEAR else np.zeros(0, bool)
                  for b in bases]
    n_nonlinear = sum(b.label != LINEAR for b in bases)
    cap = opts.outer_cap(n, n_nonlinear)

    def solve(keys, warm_beta):
        return _irls(design.matrix(keys), y, omega, family, warm_beta, opts)

    beta0 = np.zeros(1 + len(ws))
    beta0[0] = _initial_intercept(data, family, omega)
    beta, eta, obj = solve(ws.members, beta0)
    history = [obj]
    converged = False
    iterations = 1
    in_set = [np.zeros(b.size, dtype=bool) for b in bases]
    for (i, j) in ws.members:
        if i >= 1:
            in_set[j][i - 1] = True

    while True:
        r = omega * (y - family.inv_link(eta))
        D = compute_derivatives(r, bases)
        masks = [m & ~s for m, s in zip(cand_masks, in_set)]
        decision = stopping_check(D, masks, history, opts, family)
        if isinstance(decision, Stop):
            converged = True
            log.debug("stopping after %d iterations: %s", iterations, decision.reason)
            break
        if iterations >= cap:
            log.warning("fit_scmle hit max_outer_iters=%d", cap)
            break
        iterations += 1

        prev = (list(ws.free), beta, eta, obj)
        new_key = decision.key
        ws.free.append(new_key)
        w_star = np.append(beta, 0.0)
        n_fixed = len(ws.fixed)
        while True:
            w_new, eta_new, obj_new = solve(ws.members, w_star)
            constrained = np.zeros(len(w_new), dtype=bool)
            constrained[1 + n_fixed:] = True
            if not np.any(constrained & (w_new <= 0)):
                break
            p, drop = moving_ratio(w_star, w_new, constrained)
            w_star = (1 - p) * w_star + p * w_new
            keep = np.ones(len(w_new), dtype=bool)
            keep[drop] = False
            dropped = {ws.members[k - 1] for k in drop}
            ws.free = [key for key in ws.free if key not in dropped]
            w_star = w_star[keep]
        beta, eta, obj = w_new, eta_new, obj_new

        if not obj > history[-1]:
            # no progress: keep the previous iterate and stop
            ws.free, beta, eta, obj = prev
            converged = True
            log.debug("objective did not increase at iteration %d", iterations)
            break
        history.append(obj)
        in_set = [np.zeros(b.size, dtype=bool) for b in bases]
        for (i, j) in ws.members:
            if i >= 1:
                in_set[j][i - 1] = True

    return _assemble(design, ws, beta, eta, obj, iterations, converged, history, opts)


def _assemble(design: Design, ws: WorkingSet, beta, eta, obj, iterations, converged,
              history, opts: SolverOptions) -> AdditiveFit:
    comps = []
    weights = [np.zeros(1 if b.label == LINEAR else b.size) for b in design.bases]
    for key, b in zip(ws.members, beta[1:]):
        i, j = key
        weights[j][0 if i == 0 else i - 1] = b
    degenerate = []
    for j, b in enumerate(design.bases):
        if b.label == LINEAR:
            comps.append(ComponentFit(LINEAR, np.empty(0), weights[j]))
        else:
            comps.append(ComponentFit(b.label, b.knots.copy(), weights[j]))
            if b.size == 2 and b.label >= 4:
                degenerate.append(j)
    family = design.family
    if family.kind in (Kind.POISSON, Kind.BINOMIAL):
        saturated = np.abs(eta) >= opts.eta_cap
        fitted = np.clip(eta, -opts.eta_cap, opts.eta_cap)
    else:
        saturated = np.zeros(eta.shape, dtype=bool)
        fitted = eta.copy()
    return AdditiveFit(
        shapes=design.shapes,
        components=tuple(comps),
        intercept=float(beta[0]),
        fitted_eta=fitted,
        saturated=saturated,
        loglik=float(obj),
        iterations=iterations,
        converged=converged,
        history=tuple(history),
        degenerate=tuple(degenerate),
    )
