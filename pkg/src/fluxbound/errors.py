"""Exception types shared across the package."""


class FluxboundError(Exception):
    """Base class for all package errors."""


class ParameterError(FluxboundError, ValueError):
    """Invalid parameter (grid size, domain, scale, tolerance...)."""


class GridMismatch(FluxboundError, ValueError):
    """Two fields that must share a grid do not."""


class PreconditionError(FluxboundError, ValueError):
    """Input violates a documented precondition."""


class NotMeanFree(PreconditionError):
    """A field that must have zero domain average does not."""


class NotIncompressible(PreconditionError):
    """A velocity field is not (discretely) divergence free."""


class CFLViolation(PreconditionError):
    """Explicit time step exceeds the advective stability limit."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class DegenerateTestFunction(FluxboundError, ValueError):
    """Test function with zero (or numerically zero) denominator."""


class DegenerateFlow(FluxboundError, ValueError):
    """Flow that cannot be normalized (zero norm)."""


class ConsistencyError(FluxboundError, ValueError):
    """Inputs are individually valid but mutually inconsistent."""


class NoConvergence(FluxboundError, RuntimeError):
    """Iterative method failed to reach its tolerance.

    ``best`` carries whatever best iterate / state was available.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class ResourceLimit(FluxboundError, MemoryError):
    """A requested computation would exceed the available memory."""
