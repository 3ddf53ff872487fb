"""Exception hierarchy shared by every solver component."""


class RboError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(RboError, ValueError):
    """A parameter violates its documented range."""


class DomainError(RboError, ValueError):
    """A design vector lies outside the design space."""


class TaintedSampleError(RboError):
    """The limit state returned a non-finite value for some sample."""

    def __init__(self, index, value):
        self.index = int(index)
        self.value = value
        super().__init__(f"limit state returned {value!r} at sample index {self.index}")


class PoisednessError(RboError):
    """Regression design matrix is rank deficient."""


class InfeasibleRegionError(RboError):
    """Trust-region ball does not intersect the design box."""


class SurrogateFailureError(RboError):
    """Surrogate certification failed before the radius guard was reached."""

    def __init__(self, message, radius=None, loo_error=None):
        self.radius = radius
        self.loo_error = loo_error
        super().__init__(message)


class InfeasibleSubproblemError(RboError):
    """The surrogate constraint cannot be satisfied anywhere in the trust region."""

    def __init__(self, message, min_surrogate=None):
        self.min_surrogate = min_surrogate
        super().__init__(message)


class ConfigError(RboError, ValueError):
    """Malformed configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)
