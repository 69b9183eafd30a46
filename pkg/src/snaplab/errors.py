"""Exception hierarchy shared across the package."""


class SnapError(Exception):
    """Base class for all package errors."""


class DimensionError(SnapError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SnapError, ValueError):
    """A documented precondition was violated."""


class ConfigError(SnapError, ValueError):
    """Invalid or unknown configuration value."""


class FormatError(SnapError, ValueError):
    """A binary file does not follow its documented layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DegenerateUpdateError(SnapError, ArithmeticError):
    """Variance allocation received an all-zero projection vector."""


class NumericError(SnapError, ArithmeticError):
    """Numerical routine failed (non-convergence, non-finite values)."""
