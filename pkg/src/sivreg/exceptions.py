"""Exception hierarchy for sivreg.

Every library error derives from SivError so callers (and the CLI) can map
failures to stable exit codes.
"""

from __future__ import annotations


class SivError(Exception):
    """Base class for all sivreg errors."""

    exit_code = 1


class RankDeficientError(SivError):
    """Design matrix is numerically rank deficient."""

    exit_code = 6


class TooFewRowsError(SivError):
    """Not enough complete rows for the requested fit."""

    exit_code = 5


class DegenerateVarianceError(SivError):
    """A variance required to be positive is zero (constant input)."""

    exit_code = 12


class NonPositiveVarianceError(SivError):
    """FGLS weights contain a non-positive variance."""

    exit_code = 13


class DegenerateDirectionError(SivError):
    """Outcome and endogenous regressor are collinear; no orthogonal
    direction exists and no instrument can be synthesized."""

    exit_code = 7


class EmptyGridError(SivError):
    """The instrument-strength bound leaves no admissible delta values."""

    exit_code = 10


class NoEndogeneityError(SivError):
    """Neither sign hypothesis admits a moment crossing; OLS is the
    recommended estimator."""

    exit_code = 8


class AmbiguousSignError(SivError):
    """Both sign hypotheses admit a crossing; an explicit sign override is
    required."""

    exit_code = 9


class UnderIdentifiedError(SivError):
    """Fewer instruments than endogenous regressors."""

    exit_code = 14


class AllReplicationsFailedError(SivError):
    """Every bootstrap replication failed."""

    exit_code = 11


class ParseError(SivError):
    """CSV cell could not be parsed; carries 1-based line and column."""

    exit_code = 4

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column
