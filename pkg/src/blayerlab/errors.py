"""Exception hierarchy shared by all solvers and diagnostics."""


class LabError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(LabError, ValueError):
    """Bad sizes, non-finite parameters, malformed schedules."""


class ShapeError(LabError, ValueError):
    """Array length/shape does not match the grid it claims to live on."""


class DomainError(LabError, ValueError):
    """Input outside the mathematical domain of an operation."""


class PreconditionError(LabError, ValueError):
    """A documented operation precondition was violated."""


class ExtrapolationError(DomainError):
    """Requested evaluation beyond the representable similarity range."""


class InversionError(LabError, ValueError):
    """Monotone inversion of a stream function failed (non-monotone input)."""


class SolverError(LabError, RuntimeError):
    """Nonlinear or linear solve failed to converge."""


class ResolutionError(SolverError):
    """Requested tolerance is unreachable at the given resolution."""


class IntegrityError(LabError, RuntimeError):
    """An internal invariant that should always hold was violated."""
