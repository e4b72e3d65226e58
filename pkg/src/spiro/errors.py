"""Exception hierarchy shared by all spiro modules."""


class SpiroError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class InvalidInput(SpiroError):
    """An argument violates an operation's precondition."""

    exit_code = 2


class RejectedManeuver(SpiroError):
    """The flow-volume curve failed the maneuver shape rules."""

    exit_code = 3


class UncertainInput(SpiroError):
    """A recording could not be voted into a single class."""

    exit_code = 4


class OnsetNotFound(SpiroError):
    """No sample crossed the exhalation-onset threshold."""

    exit_code = 5


class SignalTooShort(SpiroError):
    """The signal is shorter than the analysis window or filter."""

    exit_code = 6


class InsufficientPeaks(SpiroError):
    """Fewer than two peaks were found; no rate can be derived."""

    exit_code = 6


class SchemaError(SpiroError):
    """A feature vector does not match the model's feature schema."""

    exit_code = 7


class InvalidDataset(SpiroError):
    """A training set is missing a class or is otherwise unusable."""

    exit_code = 2


class ValidationError(SpiroError):
    """A manifest entry failed validation."""

    exit_code = 2


class FormatError(SpiroError):
    """A file's bytes do not match the expected format.

    ``byte_offset`` points at the offending field when known.
    """

    exit_code = 2

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class IoError(SpiroError):
    """An output path could not be written."""

    exit_code = 10
