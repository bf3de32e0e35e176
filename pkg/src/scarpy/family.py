"""Natural exponential families with canonical links.

Four families are supported: Gaussian, Poisson, Binomial and Gamma.  Each
carries its canonical link ``g``, the log-partition ``B`` and the first two
derivatives of ``B``.  Linear predictors live on the extended real line: IEEE
``+inf``/``-inf`` stand for the limits of a diverging fit, and the partial
log-likelihood follows the limit conventions for those values.

Gamma is the one family whose log-partition has a restricted domain
(``eta < 0``).  Outside it the scalar API returns :data:`OUT_OF_DOMAIN`, a
distinguished infinity that can be told apart from an ordinary overflow with
``value is OUT_OF_DOMAIN``.  Overflow itself cannot happen inside ``B``: the
exponentials used by Poisson and Binomial are evaluated on ``eta`` clamped to
``[-EXP_CLAMP, EXP_CLAMP]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

EXP_CLAMP = 700.0


class DomainError(ValueError):
    """Raised when a mean or linear predictor lies outside a family's domain."""


class _OutOfDomain(float):
    """Positive infinity tagged as a log-partition domain violation."""

    def __new__(cls):
        return super().__new__(cls, math.inf)

    def __repr__(self):
        return "OUT_OF_DOMAIN"


OUT_OF_DOMAIN = _OutOfDomain()


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    BINOMIAL = "binomial"
    GAMMA = "gamma"


@dataclass(frozen=True)
class EfFamily:
    """An exponential family with canonical link.

    ``trials`` is the Binomial ``T``: responses are proportions on the grid
    ``{0, 1/T, ..., 1}``.  It is ignored by the other families.
    """

    kind: Kind
    trials: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials!r}")

    @classmethod
    def from_name(cls, name: str, trials: int = 1) -> "EfFamily":
        return cls(Kind(name.lower()), trials)

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def allows_positive_infinity(self) -> bool:
        return self.kind is not Kind.GAMMA

    # ------------------------------------------------------------------
    # vectorised primitives (finite inputs unless stated otherwise)

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        _check_mean(self.kind, mu)
        with np.errstate(divide="ignore"):
            if self.kind is Kind.GAUSSIAN:
                return mu.copy()
            if self.kind is Kind.POISSON:
                return np.log(mu)
            if self.kind is Kind.BINOMIAL:
                return np.log(mu) - np.log1p(-mu)
            return -1.0 / mu

    def inv_link(self, eta):
        """``B'(eta)``; infinite inputs map to the boundary of the mean space."""
        eta = np.asarray(eta, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return eta.copy()
        if self.kind is Kind.POISSON:
            return np.exp(np.minimum(eta, EXP_CLAMP))
        if self.kind is Kind.BINOMIAL:
            return _expit(eta)
        if np.any(eta >= 0):
            raise DomainError("Gamma linear predictor must be strictly negative")
        return -1.0 / eta

    def log_partition(self, eta):
        """``B(eta)`` elementwise; Gamma entries with ``eta >= 0`` become ``+inf``."""
        eta = np.asarray(eta, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return 0.5 * eta * eta
        if self.kind is Kind.POISSON:
            return np.exp(np.minimum(eta, EXP_CLAMP))
        if self.kind is Kind.BINOMIAL:
            return np.logaddexp(0.0, eta)
        out = np.full(eta.shape, np.inf)
        ok = eta < 0
        out[ok] = -np.log(-eta[ok])
        return out

    def variance(self, eta):
        """``B''(eta)``, the IRLS working weight."""
        eta = np.asarray(eta, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return np.ones_like(eta)
        if self.kind is Kind.POISSON:
            return np.exp(np.clip(eta, -EXP_CLAMP, EXP_CLAMP))
        if self.kind is Kind.BINOMIAL:
            p = _expit(eta)
            return p * (1.0 - p)
        return 1.0 / (eta * eta)

    def unit_loglik(self, eta, y):
        """Per-observation ``y*eta - B(eta)`` with the extended-real conventions."""
        eta = np.asarray(eta, dtype=float)
        y = np.asarray(y, dtype=float)
        eta, y = np.broadcast_arrays(eta, y)
        out = np.empty(eta.shape)
        fin = np.isfinite(eta)
        with np.errstate(invalid="ignore", over="ignore"):
            out[fin] = y[fin] * eta[fin] - self.log_partition(eta[fin])
        if not fin.all():
            pos = eta == np.inf
            neg = eta == -np.inf
            out[pos] = _limit_plus(self.kind, y[pos])
            out[neg] = _limit_minus(self.kind, y[neg])
        if self.kind is Kind.GAMMA:
            out[eta >= 0] = -np.inf
        return out

    def in_support(self, y, trials=None) -> np.ndarray:
        """Boolean mask of responses inside the family's support."""
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(y)
        if self.kind is Kind.POISSON:
            ok &= (y >= 0) & (np.floor(y) == y)
        elif self.kind is Kind.GAMMA:
            ok &= y > 0
        elif self.kind is Kind.BINOMIAL:
            t = self.trials if trials is None else np.asarray(trials, dtype=float)
            scaled = y * t
            ok &= (y >= 0) & (y <= 1) & (np.abs(scaled - np.round(scaled)) <= 1e-8 * np.maximum(t, 1))
        return ok


def _expit(eta):
    out = np.empty(np.shape(eta))
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_mean(kind: Kind, mu: np.ndarray) -> None:
    if kind is Kind.GAUSSIAN:
        bad = ~np.isfinite(mu)
    elif kind is Kind.BINOMIAL:
        bad = ~((mu > 0) & (mu < 1))
    else:
        bad = ~((mu > 0) & np.isfinite(mu))
    if np.any(bad):
        raise DomainError(f"mean value outside the {kind.value} mean space")


def _limit_plus(kind: Kind, y):
    # lim_{a -> +inf} y*a - B(a)
    if kind is Kind.GAUSSIAN:
        return np.full(y.shape, -np.inf)
    if kind is Kind.POISSON:
        return np.full(y.shape, -np.inf)
    if kind is Kind.BINOMIAL:
        return np.where(y >= 1, 0.0, -np.inf)
    return np.full(y.shape, -np.inf)


def _limit_minus(kind: Kind, y):
    # lim_{a -> -inf} y*a - B(a)
    if kind is Kind.GAUSSIAN:
        return np.full(y.shape, -np.inf)
    if kind is Kind.POISSON:
        return np.where(y <= 0, 0.0, -np.inf)
    if kind is Kind.BINOMIAL:
        return np.where(y <= 0, 0.0, -np.inf)
    # Gamma: y > 0 so y*a -> -inf while -B(a) = log(-a) grows only logarithmically
    return np.full(y.shape, -np.inf)


# ----------------------------------------------------------------------
# scalar / functional API


def link(family: EfFamily, mu: float) -> float:
    return float(family.link(mu))


def inv_link(family: EfFamily, eta: float) -> float:
    return float(family.inv_link(eta))


def log_partition(family: EfFamily, eta: float) -> float:
    eta = float(eta)
    if family.kind is Kind.GAMMA and not eta < 0:
        return OUT_OF_DOMAIN
    if eta == -math.inf:
        return 0.0 if family.kind is not Kind.GAUSSIAN else math.inf
    if eta == math.inf:
        return math.inf
    return float(family.log_partition(eta))


def scaled_partial_loglik(family: EfFamily, eta, y, weights=None, trials=None) -> float:
    """``(1/n) * sum_i w_i * (y_i * eta_i - B(eta_i))`` on the extended reals."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if eta.shape != y.shape or eta.ndim != 1 or eta.size == 0:
        raise ValueError("eta and y must be non-empty vectors of equal length")
    if weights is None:
        weights = np.ones_like(y)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != y.shape:
            raise ValueError("weights must match y in length")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
    if not family.in_support(y, trials).all():
        raise DomainError(f"response outside the {family.name} support")
    terms = family.unit_loglik(eta, y)
    if np.any(terms == -np.inf):
        return -math.inf
    return float(np.sum(weights * terms) / y.size)
