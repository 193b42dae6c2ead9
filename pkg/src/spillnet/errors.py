"""Exception and warning types shared across the package."""

from __future__ import annotations


class SpillnetError(Exception):
    """Base class for every error raised by spillnet."""


class DataError(SpillnetError, ValueError):
    """Input data cannot be used as given."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DuplicateKeyError(DataError):
    pass


class EmptyInputError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class AlignmentError(DataError):
    pass


class SingularSystemError(DataError):
    pass


class DegenerateSeriesError(DataError):
    pass


class WindowError(DataError):
    """A per-window computation failed; carries the window's end date."""

    def __init__(self, end_date, cause: Exception):
        self.end_date = end_date
        self.cause = cause
        super().__init__(f"window ending {end_date}: {cause}")


class ConfigError(SpillnetError, ValueError):
    """Configuration violates a module's parameter domain."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class SynthSpecError(SpillnetError, ValueError):
    pass


class ContractError(SpillnetError, ValueError):
    pass


class MissingPriceWarning(UserWarning):
    pass


class NumericalWarning(UserWarning):
    pass
