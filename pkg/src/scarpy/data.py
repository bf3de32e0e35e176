"""Dataset container and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .family import EfFamily, Kind


class DataError(ValueError):
    """Malformed input data; the message names the offending row when known."""


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x d), responses ``y`` and optional weights.

    For Binomial data ``y`` holds proportions and ``trials`` the per-row
    trial counts; the likelihood weight of row ``i`` is then
    ``weights[i] * trials[i]`` (see :meth:`effective_weights`).
    """

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None
    trials: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        for name in ("weights", "trials"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape != y.shape:
                    raise DataError(f"{name} must have one entry per observation")
                if np.any(~(v > 0)):
                    raise DataError(f"{name} must be positive")
                object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def effective_weights(self, family: EfFamily) -> np.ndarray:
        w = np.ones(self.n) if self.weights is None else self.weights.copy()
        if family.kind is Kind.BINOMIAL and self.trials is not None:
            w = w * self.trials
        return w

    def check_support(self, family: EfFamily) -> None:
        ok = family.in_support(self.y, self.trials)
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            raise DataError(
                f"row {i + 1}: response {self.y[i]!r} outside the {family.name} support")

    def subset(self, idx) -> "Dataset":
        pick = lambda v: None if v is None else v[idx]
        return Dataset(self.X[idx], self.y[idx], pick(self.weights), pick(self.trials))

    def project(self, A) -> "Dataset":
        return Dataset(self.X @ np.asarray(A, dtype=float), self.y, self.weights, self.trials)


def read_csv(path, response: str | None = None, covariates=None, weights: str | None = None,
             trials: str | None = None, successes: str | None = None) -> tuple[Dataset, list[str]]:
    """Read a headed CSV into a :class:`Dataset`.

    Either ``response`` (a proportion for Binomial) or ``successes`` together
    with ``trials`` names the response.  Covariates default to every other
    column.  Returns the dataset and the covariate column names.
    """
    if response is None and successes is None:
        raise DataError("a response column is required")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=float)
    col = {h: k for k, h in enumerate(header)}

    def get(name):
        if name not in col:
            raise DataError(f"{path}: no column named {name!r}")
        return table[:, col[name]]

    reserved = {c for c in (response, weights, trials, successes) if c}
    if covariates is None:
        covariates = [h for h in header if h not in reserved]
    if not covariates:
        raise DataError(f"{path}: no covariate columns")
    X = np.column_stack([get(c) for c in covariates])
    t = get(trials) if trials else None
    if successes:
        if t is None:
            raise DataError("successes requires a trials column")
        y = get(successes) / t
    else:
        y = get(response)
    w = get(weights) if weights else None
    return Dataset(X, y, w, t), list(covariates)
