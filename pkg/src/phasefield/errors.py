"""Exception types raised across the package."""


class PhaseFieldError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PhaseFieldError, ValueError):
    """Invalid mesh or run parameters."""


class MeshError(PhaseFieldError, ValueError):
    """Degenerate or inconsistently oriented triangulation."""


class DomainError(PhaseFieldError, ValueError):
    """An input violates an operator's precondition (e.g. nonzero mean)."""


class SolverError(PhaseFieldError, RuntimeError):
    """A linear or nonlinear solve failed to converge.

    ``iterate`` holds the last iterate when one is available and
    ``residual`` the last residual norm.
    """

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class IndefiniteOperatorError(SolverError):
    """Conjugate gradients met a direction with nonpositive curvature."""


class NonconvexStepError(SolverError):
    """Newton backtracking could not reduce the residual."""


class LineSearchError(SolverError):
    """The L-BFGS line search failed to find sufficient decrease."""
