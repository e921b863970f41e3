"""Exception hierarchy shared across the package.

``ValidationError`` marks bad user input (CLI exit code 1) while
``InvariantViolation`` marks a numerically violated identity that is
guaranteed to hold mathematically (CLI exit code 2).
"""


class FklabError(Exception):
    """Base class for all package errors."""


class ValidationError(FklabError):
    """Malformed or inconsistent input data."""


class NotTransientError(FklabError):
    """A Green operator at rate 0 was requested on a conservative chain."""


class NoLifetimeError(FklabError):
    """A lifetime functional was requested on a chain that never dies."""


class NotGaugeableError(FklabError):
    """An exponential moment or gauge quantity is infinite."""


class NotConvergedError(FklabError):
    """An iterative estimator failed to reach its tolerance."""


class JumpBoundError(FklabError):
    """A jump amplitude violates the required lower bound."""


class InvariantViolation(FklabError):
    """A mathematically guaranteed identity failed numerically."""
