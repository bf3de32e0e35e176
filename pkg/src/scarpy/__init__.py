"""Shape-constrained generalised additive (index) models."""

__version__ = "0.1.0"

from .active_set import AdditiveFit, SolverOptions, fit_scmle  # noqa: E402
from .basis import ComponentFit, parse_shapes  # noqa: E402
from .data import Dataset, read_csv  # noqa: E402
from .family import EfFamily  # noqa: E402
from .index import IndexFit, amari_distance, fit_scaie  # noqa: E402
from .model import FittedModel, load, save  # noqa: E402

__all__ = [
    "AdditiveFit", "ComponentFit", "Dataset", "EfFamily", "FittedModel", "IndexFit",
    "SolverOptions", "amari_distance", "fit_scaie", "fit_scmle", "load", "parse_shapes",
    "read_csv", "save",
]
