"""
DriveLens Errors Module
Exception hierarchy shared by every stage, each family carries its CLI exit code
"""

from typing import Any, Optional, Tuple


class DriveLensError(Exception):
    """Base class for every failure raised by the analytics engine"""
    exit_code = 2


# ========================
# Usage / configuration (exit 1)
# ========================

class UsageError(DriveLensError):
    """Raised when the command line is malformed"""
    exit_code = 1


class ConfigError(UsageError):
    """Raised when a configuration value cannot be parsed"""
    pass


# ========================
# Data errors (exit 2)
# ========================

class DataError(DriveLensError):
    """Raised when input data violates a documented contract"""
    exit_code = 2


class ParseError(DataError):
    """Raised when a trip, codebook or script file is malformed"""
    pass


class ValidationError(DataError):
    """Raised when a value is well-formed but violates an invariant"""

    def __init__(self, field: str, message: Optional[str] = None):
        self.field = field
        super().__init__(message or f"invalid value for field '{field}'")


class EmptyTrip(DataError):
    """Raised when a trip is shorter than one window"""
    pass


class NonUniformSampling(DataError):
    """Raised when a signal deviates from a uniform sampling grid"""
    pass


class TooShortWindow(DataError):
    pass


class TooFewFixes(DataError):
    pass


class MissingPrecedingVehicle(DataError):
    pass


class NoMatch(DataError):
    """Raised when a pedestrian cannot be matched across two frames"""
    pass


class LengthMismatch(DataError):
    pass


class DegenerateSeries(DataError):
    """Raised when a correlation input is constant"""
    pass


class NoPairs(DataError):
    pass


class ZeroDenominator(DataError):
    """Raised when a matched pair has equal treatment scores"""

    def __init__(self, pair: Tuple[int, int]):
        self.pair = pair
        super().__init__(f"treatment scores are equal for pair {pair}")


class EmptyScores(DataError):
    pass


class TooFewScores(DataError):
    pass


class EmptyHistory(DataError):
    pass


class ScorerUnavailable(DataError):
    pass


class BadDimensions(DataError):
    pass


class SpecMismatch(DataError):
    """Raised when a vector does not match the feature vector spec"""
    pass


class EmptySamples(DataError):
    pass


class NoWindows(DataError):
    pass


class VersionMismatch(DataError):
    """Raised when a codebook file was written for another format or spec"""
    pass


class UnknownFeature(DataError):
    pass


class EmptyQuery(DataError):
    pass


class EmptyList(DataError):
    pass


class EmptySet(DataError):
    pass


class NoBallots(DataError):
    pass


class EmptyResults(DataError):
    pass


class InvalidScript(DataError):
    pass


class InvalidMix(DataError):
    pass


class StageError(DataError):
    """Wraps a failure inside the pipeline with the stage and window it happened in"""

    def __init__(self, stage: str, cause: BaseException, window_index: Optional[int] = None,
                 trip_id: Optional[Any] = None):
        self.stage = stage
        self.cause = cause
        self.window_index = window_index
        self.trip_id = trip_id
        where = f"stage '{stage}'"
        if trip_id is not None:
            where += f", trip {trip_id}"
        if window_index is not None:
            where += f", window {window_index}"
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        if isinstance(cause, DriveLensError):
            self.exit_code = cause.exit_code
