"""Exception hierarchy shared by every tinlab module."""


class TinlabError(Exception):
    """Base class for all errors raised by tinlab."""


class DimensionError(TinlabError, ValueError):
    """Shapes or lengths do not line up."""


class ConfigurationError(TinlabError, ValueError):
    """An option, window length or hyperparameter is invalid."""


class DomainError(TinlabError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class UsageError(TinlabError, RuntimeError):
    """An API was called in the wrong state or order."""


class RangeError(TinlabError, IndexError):
    """Not enough history for the requested index or window."""


class FormatError(TinlabError, ValueError):
    """Input text does not follow the expected format."""


class RowError(FormatError):
    """A specific data row could not be parsed or is invalid."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")
