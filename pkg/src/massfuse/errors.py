"""Exception and warning types raised across massfuse."""

from __future__ import annotations


class MassfuseError(Exception):
    """Base class for all library errors."""


class DataError(MassfuseError, ValueError):
    """Input data violates a type invariant."""


class MismatchedColumns(DataError):
    pass


class NonFiniteValue(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class InvalidProbability(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ShapeMismatch(DataError):
    pass


class ValidationError(DataError):
    """Aggregated report of every invariant violation found in a sample pair."""

    def __init__(self, violations: list[DataError]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} violation(s): {lines}")


class SampleLargerThanPopulation(MassfuseError, ValueError):
    pass


class AllocationExceedsStratum(MassfuseError, ValueError):
    pass


class UnsupportedDesign(MassfuseError):
    """Analytic joint inclusion probabilities are unavailable for the design."""


class RankDeficient(MassfuseError, ValueError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class CompleteSeparation(MassfuseError):
    pass


class SingleClass(MassfuseError, ValueError):
    pass


class KExceedsDonors(MassfuseError, ValueError):
    pass


class InconsistentAssignment(MassfuseError, ValueError):
    pass


class NegativeVariance(MassfuseError, ValueError):
    pass


class MissingOutcomeColumn(DataError):
    pass


class MissingDesignColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(MassfuseError, ValueError):
    pass


class DidNotConverge(UserWarning):
    pass


class DegenerateDonors(UserWarning):
    pass


class VarianceFloored(UserWarning):
    pass
