"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration/argument problems
(:class:`ConfigError`, exit 2), malformed input data (:class:`DataError`,
exit 3) and numerical breakdowns (:class:`NumericalError`, exit 4).
"""


class HDInferError(Exception):
    """Base class for all package errors."""


class ConfigError(HDInferError, ValueError):
    """Invalid parameter or configuration value."""


class DataError(HDInferError, ValueError):
    """Malformed or unusable input data."""


class NumericalError(HDInferError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


# configuration / argument errors
class OutOfDomain(ConfigError):
    pass


class InvalidConstant(ConfigError):
    pass


class NonPositiveGamma(ConfigError):
    pass


class InvalidAlpha(ConfigError):
    pass


class TooManyNonzeros(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


# data errors
class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRows(DataError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class LeadingMissing(DataError):
    pass


class ConstantColumn(DataError):
    pass


class InsufficientRows(DataError):
    pass


class ZeroColumn(DataError):
    pass


# numerical errors
class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class SingularGram(NumericalError):
    pass


class DegenerateColumn(NumericalError):
    pass


class SingularSketch(NumericalError):
    pass


class DegreesOfFreedomExhausted(NumericalError):
    pass


class RankDeficientControls(NumericalError):
    pass


class ReplicationFailure(NumericalError):
    """Too many Monte Carlo replications had to be redrawn."""
