"""Exception hierarchy shared by every module."""


class FairFedError(Exception):
    """Base class for all library errors."""


class ConfigError(FairFedError, ValueError):
    """Invalid configuration or hyperparameters."""


class ShapeError(FairFedError, ValueError):
    """Array dimensions do not agree."""


class DomainError(FairFedError, ValueError):
    """Input outside the mathematical domain of an operation."""


class FormatError(FairFedError, ValueError):
    """Malformed binary file (bad magic, truncated body, count mismatch)."""


class NumericalError(FairFedError, ArithmeticError):
    """Non-finite value produced during training or aggregation."""

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index
