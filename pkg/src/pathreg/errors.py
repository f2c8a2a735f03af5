"""Exception types shared across the package."""


class PathregError(Exception):
    """Base class for all pathreg-specific failures."""


class InvalidArgument(PathregError, ValueError):
    """An argument violates a documented precondition (bad shape, range, or count)."""


class DegenerateInput(PathregError, ValueError):
    """Input data is empty or too small for the requested operation."""


class DegenerateGeometry(PathregError):
    """Input geometry does not determine a unique solution (e.g. collinear points)."""


class InfeasibleBand(PathregError):
    """The alignment band is too narrow to admit any monotone warp path."""


class NonConvergence(PathregError):
    """Iterative registration failed to converge.

    Carries the partial result (when one exists) so callers can still
    inspect or persist the diagnostics.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result
