"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class HdivError(Exception):
    """Base class for library errors."""


class ValidationError(HdivError, ValueError):
    """Invalid input: bad parameters, unknown labels, malformed files."""


class MeshDimensionError(ValidationError):
    """Geometry does not fit into the requested grid."""


class PlacementError(ValidationError):
    """A dipole lies outside the labeled computational domain."""


class MetricError(ValidationError):
    """An error metric is undefined for the given inputs (e.g. zero vector)."""


class SolverError(HdivError, RuntimeError):
    """Iterative solver failed to converge.

    Attributes
    ----------
    history : list of float
        Relative residual per outer iteration up to the failure.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
