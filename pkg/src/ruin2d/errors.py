"""Exception types shared across the package."""


class Ruin2dError(Exception):
    """Base class for package errors."""


class InvalidParameters(Ruin2dError, ValueError):
    """Model parameters violate one or more invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(Ruin2dError, ValueError):
    """An argument lies outside the domain of an operation."""


class PreconditionError(Ruin2dError, ValueError):
    """A documented precondition of an operation does not hold."""


class ConfigError(Ruin2dError, ValueError):
    """A run configuration or solver grid is malformed or inadmissible."""
