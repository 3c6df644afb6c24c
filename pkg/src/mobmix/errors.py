"""Exception hierarchy.

Everything user-facing derives from ValueError so callers can catch one
family; the CLI maps these to exit code 2 and keeps 3 for genuine bugs.
"""


class MobmixError(ValueError):
    """Base class for all input and data errors raised by this package."""


class DataFormatError(MobmixError):
    """Malformed or inconsistent input data (CSV rows, JSON features)."""


class DegenerateUserError(MobmixError):
    """A statistic is requested for a user without enough distinct state."""


class UndefinedStatisticError(MobmixError):
    """The requested statistic does not exist for this input (zero variance)."""


class InsufficientDataError(MobmixError):
    """Not enough samples inside the configured range to fit or estimate."""


class InvariantError(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
