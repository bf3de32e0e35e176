"""Shape labels, hinge/step basis functions and additive components.

Labels follow the usual nine-way taxonomy::

    1 linear          4 convex             7 concave
    2 increasing      5 convex increasing  8 concave increasing
    3 decreasing      6 convex decreasing  9 concave decreasing

Every non-linear component is a non-negative combination of basis functions
anchored at the sorted distinct covariate values (the knots).  For labels 4
and 7 the weight of the first knot is unrestricted in sign, which supplies
the linear part of a free convex/concave function.  That element is
evaluated as the identity ``x``: on the data it agrees with the hinge at the
smallest knot up to a constant absorbed by the intercept, and unlike the
hinge it keeps the component convex (concave) below the data range.  All
basis functions vanish at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LINEAR = 1
STEP_LABELS = frozenset({2, 3})
HINGE_LABELS = frozenset({4, 5, 6, 7, 8, 9})
FREE_FIRST_LABELS = frozenset({4, 7})
INCREASING = frozenset({2, 5, 8})
DECREASING = frozenset({3, 6, 9})
CONVEX = frozenset({4, 5, 6})
CONCAVE = frozenset({7, 8, 9})

ALIASES = {
    "lin": 1, "in": 2, "de": 3,
    "cvx": 4, "cvxin": 5, "cvxde": 6,
    "ccv": 7, "ccvin": 8, "ccvde": 9,
}
NAMES = {v: k for k, v in ALIASES.items()}


class DegenerateCoordinateError(ValueError):
    """A shape-constrained coordinate takes a single value across the sample."""


def parse_shapes(spec) -> tuple[int, ...]:
    """Parse ``"cvx,in,3"`` or an iterable of labels/aliases into labels."""
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    out = []
    for item in spec:
        if isinstance(item, str) and not item.isdigit():
            try:
                out.append(ALIASES[item.lower()])
            except KeyError:
                raise ValueError(f"unknown shape alias {item!r}") from None
        else:
            out.append(int(item))
    validate_shapes(out)
    return tuple(out)


def validate_shapes(shapes) -> None:
    if len(shapes) == 0:
        raise ValueError("shape vector must be non-empty")
    for s in shapes:
        if s not in range(1, 10):
            raise ValueError(f"shape label must be in 1..9, got {s!r}")


def linear_first_order(shapes) -> list[int]:
    """Coordinate order with linear components first, otherwise stable."""
    return sorted(range(len(shapes)), key=lambda j: shapes[j] != LINEAR)


def basis_eval(label: int, knot: float, x):
    """Evaluate the basis function for ``label`` anchored at ``knot``.

    Works elementwise on arrays.  ``label`` must be one of 2..9.
    """
    x = np.asarray(x, dtype=float)
    t = float(knot)
    if label == 2:
        return (t <= x).astype(float) - float(t <= 0)
    if label == 3:
        return (x < t).astype(float) - float(0 < t)
    if label in (4, 5):
        return np.where(t <= x, x - t, 0.0) + (t if t <= 0 else 0.0)
    if label == 6:
        return np.where(x <= t, t - x, 0.0) - (t if 0 <= t else 0.0)
    if label in (7, 9):
        return np.where(t <= x, t - x, 0.0) - (t if t <= 0 else 0.0)
    if label == 8:
        return np.where(x <= t, x - t, 0.0) + (t if 0 <= t else 0.0)
    raise ValueError(f"basis_eval needs a non-linear label, got {label!r}")


@dataclass(frozen=True)
class ComponentKnots:
    """Sorted distinct covariate values of one coordinate plus its label.

    ``ranks[u]`` is the knot index of observation ``u``; it is empty for
    linear coordinates, which use the identity basis instead of knots.
    """

    label: int
    knots: np.ndarray
    ranks: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.knots)

    def column(self, i: int, x) -> np.ndarray:
        if i == 0 and self.label in FREE_FIRST_LABELS:
            return np.asarray(x, dtype=float).copy()
        return basis_eval(self.label, self.knots[i], x)

    def candidate_mask(self) -> np.ndarray:
        """Knots whose basis function is non-constant on the sample.

        The remaining ones are constant over the data, hence collinear with
        the intercept and never useful in the working set.
        """
        k = self.size
        mask = np.ones(k, dtype=bool)
        if self.label in (2, 3, 6, 8):
            mask[0] = False
        elif self.label in (4, 5, 7, 9):
            mask[-1] = False
        return mask


def build_bases(X, shapes) -> list[ComponentKnots]:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two observations")
    if len(shapes) != d:
        raise ValueError(f"shape vector has length {len(shapes)} but X has {d} columns")
    validate_shapes(shapes)
    out = []
    for j, label in enumerate(shapes):
        if label == LINEAR:
            out.append(ComponentKnots(LINEAR, np.empty(0), np.empty(0, dtype=np.intp)))
            continue
        knots, ranks = np.unique(X[:, j], return_inverse=True)
        if len(knots) < 2:
            raise DegenerateCoordinateError(
                f"coordinate {j} is constant but carries shape label {label}")
        out.append(ComponentKnots(int(label), knots, ranks.astype(np.intp)))
    return out


@dataclass(frozen=True)
class ComponentFit:
    """One fitted additive component.

    For a linear label ``weights`` holds the single slope and ``knots`` is
    empty.  Otherwise ``weights[i]`` multiplies the basis anchored at
    ``knots[i]`` (zero for inactive knots); for labels 4 and 7
    ``weights[0]`` is a plain slope.
    """

    label: int
    knots: np.ndarray
    weights: np.ndarray

    def __call__(self, x):
        return component_eval(self, x)

    def in_cone(self, tol: float = 0.0) -> bool:
        if self.label == LINEAR:
            return True
        w = self.weights
        if self.label in FREE_FIRST_LABELS:
            w = w[1:]
        return bool(np.all(w >= -tol))

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.weights))


def component_eval(fit: ComponentFit, x):
    x = np.asarray(x, dtype=float)
    if fit.label == LINEAR:
        if fit.weights.size == 0:
            return np.zeros_like(x)
        return fit.weights[0] * x
    out = np.zeros_like(x)
    for i in np.flatnonzero(fit.weights):
        if i == 0 and fit.label in FREE_FIRST_LABELS:
            out = out + fit.weights[0] * x
        else:
            out = out + fit.weights[i] * basis_eval(fit.label, fit.knots[i], x)
    return out


def check_shape(fit: ComponentFit, grid, tol: float = 1e-10) -> bool:
    """Whether the component has its label's shape on a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    v = component_eval(fit, grid)
    d1 = np.diff(v)
    label = fit.label
    scale = tol * max(1.0, float(np.max(np.abs(v))) if v.size else 1.0)
    if label in INCREASING and np.any(d1 < -scale):
        return False
    if label in DECREASING and np.any(d1 > scale):
        return False
    if grid.size < 3:
        return True
    # second differences of the slopes handle non-uniform grids
    h = np.diff(grid)
    keep = h > 0
    slopes = d1[keep] / h[keep]
    s2 = np.diff(slopes)
    sscale = tol * max(1.0, float(np.max(np.abs(slopes))) if slopes.size else 1.0)
    if label == LINEAR:
        return bool(np.all(np.abs(s2) <= sscale))
    if label in CONVEX and np.any(s2 < -sscale):
        return False
    if label in CONCAVE and np.any(s2 > sscale):
        return False
    return True
