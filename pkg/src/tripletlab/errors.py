"""Exception types shared across the library.

Every error raised on bad input derives from :class:`TripletLabError`, so
callers (and the CLI) can separate "your input was invalid" from genuine
runtime failures.
"""


class TripletLabError(ValueError):
    """Base class for all input-contract violations in this package."""


class ZeroVectorError(TripletLabError):
    """A vector with (near-)zero Euclidean norm where a direction is required."""


class DimensionMismatchError(TripletLabError):
    """Array shapes do not chain or agree."""


class EmptyRowError(TripletLabError):
    """An ordering was requested for an empty vector."""


class KOutOfRangeError(TripletLabError):
    """Deputy rank k outside 1..m."""


class EmptyNegativesError(TripletLabError):
    """A view with zero negatives where at least one is required."""


class OutOfRangeError(TripletLabError):
    """Scalar parameter outside its documented domain."""


class StaleCacheError(TripletLabError):
    """Backward pass invoked with a cache from a different forward call."""


class InvalidSpecError(TripletLabError):
    """A dataset/augmentation/probe spec violates its invariants."""


class BatchTooSmallError(TripletLabError):
    """Contrastive batches need at least two items (one negative)."""


class ParseError(TripletLabError):
    """A file could not be parsed; carries the 1-based offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RowCountMismatchError(TripletLabError):
    """Embedding and label files disagree on row count."""


class NonFiniteValueError(ParseError):
    """NaN or infinity where a finite number is required."""


class SingleClassError(TripletLabError):
    """A diagnostic that needs >= 2 classes saw fewer."""


class EmptyClassError(TripletLabError):
    """A class label with no samples."""


class NoBatchesError(TripletLabError):
    """Frequency counting over an empty batch stream."""


class DegenerateInputError(TripletLabError):
    """All points identical; clustering is undefined."""


class EmptySplitError(TripletLabError):
    """A train or test split with no rows."""


class InvalidConfigError(TripletLabError):
    """Experiment config rejected; carries the dotted field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
