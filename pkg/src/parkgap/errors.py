"""Exception hierarchy shared by every parkgap module."""


class ParkGapError(Exception):
    """Base class for all errors raised by parkgap."""


class OutOfRangeError(ParkGapError, ValueError):
    """A timestamp or window falls outside the valid range."""


class InvariantViolation(ParkGapError, ValueError):
    """An ordering or alternation invariant would be broken."""


class ParameterError(ParkGapError, ValueError):
    """A distribution or algorithm parameter is invalid."""


class CaseMismatchError(ParkGapError, ValueError):
    """A gap state was handed to the probability routine for the other case."""


class EstimationError(ParkGapError, ValueError):
    """Not enough history to estimate a context model."""


class AccountingError(ParkGapError, ValueError):
    """Vehicle counts violate conservation."""


class ConfigurationError(ParkGapError, ValueError):
    """A simulation or scenario configuration is invalid.

    ``problems`` lists every validation failure, not only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InputError(ParkGapError, ValueError):
    """Inputs to a metric computation are inconsistent."""


class TraceFormatError(ParkGapError, ValueError):
    """A trace file cannot be parsed."""
