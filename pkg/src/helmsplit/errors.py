"""Exception hierarchy shared by all modules."""


class HelmsplitError(Exception):
    """Base class for library errors."""


class DomainError(HelmsplitError, ValueError):
    """Argument outside the mathematical domain of a function."""


class CapacityError(HelmsplitError, ValueError):
    """Request exceeds a configured capacity (order, mode count, ...)."""


class ConfigurationError(HelmsplitError, ValueError):
    """Inconsistent or invalid configuration."""


class GeometryError(HelmsplitError, ValueError):
    """Mesh or geometry request cannot be satisfied."""


class DataError(HelmsplitError, ValueError):
    """Coefficient or right-hand side data violates a hypothesis."""


class ContractError(HelmsplitError, ValueError):
    """Caller broke an operation precondition."""


class SolverError(HelmsplitError, RuntimeError):
    """Linear solve failed or produced an unusable result."""


class TruncationError(HelmsplitError, ValueError):
    """Requested range exceeds the resolved part of a spectrum."""


class QuadratureError(HelmsplitError, RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


class ConditioningWarning(UserWarning):
    """A per-mode system is nearly singular; the value is still returned."""
