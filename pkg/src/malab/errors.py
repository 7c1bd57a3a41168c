"""Exception types shared across the package."""

from __future__ import annotations


class MalabError(Exception):
    """Base class for all package errors."""


class NonConvexInputError(MalabError):
    """A domain description failed a convexity check."""


class ResolutionError(MalabError):
    """Mesh width too coarse for the domain's structural constant."""


class PinchingError(MalabError):
    """A right-hand side violates the requested determinant bounds."""


class SolverError(MalabError):
    """A linear or nonlinear solve failed to converge.

    Carries the residual history so callers can report the failure mode.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class DegenerateFieldError(MalabError):
    """A matrix field failed a pointwise eigenvalue admissibility check."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class FitRejectedError(MalabError):
    """A regression had too few usable points or degenerate spread."""


class ConfigError(MalabError):
    """Experiment configuration failed to parse or validate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics) if diagnostics is not None else []
