"""Exception types shared across the package."""


class RSLError(Exception):
    """Base class for package errors."""


class InvalidArgument(RSLError, ValueError):
    pass


class InvalidSpec(RSLError, ValueError):
    pass


class RegimeViolation(RSLError, ValueError):
    """An argument lies outside the regime where a formula is valid."""


class NumericFailure(RSLError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RegimeWarning(UserWarning):
    """A computation ran outside the regime its guarantees assume."""
