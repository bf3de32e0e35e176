"""Fitted-model container, prediction and JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .active_set import AdditiveFit
from .basis import ComponentFit
from .family import EfFamily, Kind
from .index import IndexFit

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Model document is corrupt or uses an unsupported schema."""


@dataclass(frozen=True)
class FittedModel:
    """An additive or index fit together with its family and shapes.

    For index models ``shapes`` are the ridge labels (length m) and
    ``index_matrix`` is d x m; for additive models ``index_matrix`` is None.
    """

    family: EfFamily
    shapes: tuple
    intercept: float
    components: tuple
    index_matrix: np.ndarray | None = None
    eta_cap: float = 30.0
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_fit(cls, fit, family: EfFamily, eta_cap: float = 30.0, **metadata):
        if isinstance(fit, IndexFit):
            ridge = fit.ridge_fit
            A = np.array(fit.index_matrix, dtype=float)
            metadata.setdefault("d", A.shape[0])
            metadata.setdefault("m", A.shape[1])
            metadata.setdefault("delta", fit.delta)
        else:
            ridge, A = fit, None
            metadata.setdefault("d", len(fit.components))
        metadata.setdefault("n", int(ridge.fitted_eta.shape[0]))
        metadata.setdefault("loglik", ridge.loglik)
        metadata.setdefault("converged", ridge.converged)
        metadata.setdefault("version", __version__)
        return cls(family, tuple(ridge.shapes), ridge.intercept, tuple(ridge.components),
                   A, eta_cap, metadata)

    @property
    def kind(self) -> str:
        return "additive" if self.index_matrix is None else "index"

    @property
    def d(self) -> int:
        return len(self.components) if self.index_matrix is None else self.index_matrix.shape[0]

    def predict_eta(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} covariate columns, got {X.shape[1]}")
        Z = X if self.index_matrix is None else X @ self.index_matrix
        eta = np.full(Z.shape[0], self.intercept)
        for j, comp in enumerate(self.components):
            eta += comp(Z[:, j])
        return eta

    def predict_mean(self, X, return_saturated: bool = False):
        eta = self.predict_eta(X)
        saturated = np.zeros(eta.shape, dtype=bool)
        if self.family.kind in (Kind.POISSON, Kind.BINOMIAL):
            saturated = np.abs(eta) >= self.eta_cap
            eta = np.clip(eta, -self.eta_cap, self.eta_cap)
        mean = self.family.inv_link(eta)
        return (mean, saturated) if return_saturated else mean

    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "family": {"kind": self.family.name, "trials": self.family.trials},
            "shapes": list(self.shapes),
            "kind": self.kind,
            "intercept": self.intercept,
            "eta_cap": self.eta_cap,
            "components": [
                {"label": c.label, "knots": c.knots.tolist(), "weights": c.weights.tolist()}
                for c in self.components
            ],
            "metadata": self.metadata,
        }
        if self.index_matrix is not None:
            doc["index_matrix"] = self.index_matrix.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedModel":
        if not isinstance(doc, dict) or "schema_version" not in doc:
            raise SchemaError("not a model document")
        version = doc["schema_version"]
        if version != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {version!r}; "
                              f"this build reads version {SCHEMA_VERSION}")
        try:
            fam = EfFamily.from_name(doc["family"]["kind"], doc["family"].get("trials", 1))
            comps = tuple(
                ComponentFit(int(c["label"]), np.array(c["knots"], dtype=float),
                             np.array(c["weights"], dtype=float))
                for c in doc["components"]
            )
            A = doc.get("index_matrix")
            if doc["kind"] == "index":
                if A is None:
                    raise SchemaError("index model without index_matrix")
                A = np.array(A, dtype=float)
            else:
                A = None
            return cls(fam, tuple(int(s) for s in doc["shapes"]), float(doc["intercept"]),
                       comps, A, float(doc.get("eta_cap", 30.0)), dict(doc.get("metadata", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed model document: {exc}") from None


def save(model: FittedModel) -> bytes:
    # json writes floats with repr(), which round-trips every double exactly
    return json.dumps(model.to_dict(), indent=1, allow_nan=True).encode("utf-8")


def load(payload: bytes) -> FittedModel:
    try:
        doc = json.loads(payload.decode("utf-8") if isinstance(payload, bytes) else payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"corrupt model payload: {exc}") from None
    return FittedModel.from_dict(doc)


def predict_eta(model: FittedModel, X) -> np.ndarray:
    return model.predict_eta(X)


def predict_mean(model: FittedModel, X) -> np.ndarray:
    return model.predict_mean(X)
