"""Exception types shared across the package.

Each maps onto one CLI exit code (see ``chanest.cli``).
"""


class ChanestError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(ChanestError, ValueError):
    exit_code = 2


class ConfigError(InvalidArgumentError):
    exit_code = 2


class ContainerFormatError(ChanestError):
    """Malformed channel container. ``offset`` is the byte offset where parsing failed."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ChanestError, ArithmeticError):
    exit_code = 4


class InternalConsistencyError(NumericalError):
    pass


class NotFittedError(ChanestError, AttributeError):
    pass
