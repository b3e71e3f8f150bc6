"""Exception hierarchy shared across the package."""


class DpgsError(Exception):
    """Base class for every error raised by dpgs."""


class ContractError(DpgsError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigurationError(DpgsError, ValueError):
    """A configuration value is invalid or cannot be satisfied."""


class ParseError(DpgsError, ValueError):
    """An input file could not be parsed.

    ``row`` is the zero-based data row at which parsing failed, or None when
    the failure is not attributable to a single row.
    """

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ShapeError(DpgsError, ValueError):
    """Array dimensions are inconsistent or degenerate."""


class BudgetExceededError(DpgsError):
    """A ledger audit found more privacy spent than was declared."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class DegenerateFitError(DpgsError):
    """Every cluster of a private fit came back degenerate."""
