"""Exception types shared across the package."""


class BilevelError(Exception):
    """Base class for all package-specific errors."""


class InfeasiblePointError(BilevelError):
    """A point lies outside the domain of an epi-polyhedral function."""


class InfeasibleFunctionError(BilevelError):
    """The domain of an epi-polyhedral function is empty."""


class NotASubgradientError(BilevelError):
    """No nonnegative multiplier representation exists within tolerance."""


class InvalidDualError(BilevelError):
    """A dual vector lies outside the domain of the conjugate function."""


class IllConditionedError(BilevelError):
    """The reduced sensitivity system is numerically singular.

    Growing ill-conditioning of the reduced system as the regularization
    vanishes is the practical signal that the well-posedness assumption of
    the method fails at the current point.
    """

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class ConvergenceError(BilevelError):
    """An iterative solve hit its iteration cap before reaching tolerance.

    Carries the best iterate found so that callers can inspect or salvage it.
    """

    def __init__(self, message, solution=None, residual=None):
        super().__init__(message)
        self.solution = solution
        self.residual = residual


class ConfigError(BilevelError):
    """A run configuration failed schema validation."""
