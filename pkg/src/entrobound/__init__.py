"""Rigorous upper bounds on invariance entropy via finite grid abstractions."""

from .geometry import (
    GEOM_TOL,
    CellId,
    HyperRect,
    OutOfDomainError,
    Polytope,
    UniformGrid,
    fitted_eta,
    rect_in_polytope,
)

__version__ = "0.1.0"

__all__ = [
    "GEOM_TOL",
    "CellId",
    "HyperRect",
    "OutOfDomainError",
    "Polytope",
    "UniformGrid",
    "fitted_eta",
    "rect_in_polytope",
    "__version__",
]
