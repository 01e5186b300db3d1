"""Exception taxonomy shared across the engine.

Every error carries a short machine-parseable ``category`` used by the CLI
to emit one-line diagnostics and distinct exit codes.
"""


class AvseError(Exception):
    """Base class for all engine errors."""

    category = "error"
    exit_code = 1


class ShapeError(AvseError):
    """Tensor or spectrogram dimensions do not match an operation's contract."""

    category = "shape"
    exit_code = 2


class ConfigError(AvseError):
    """Invalid analysis/model configuration (e.g. wrong sample rate)."""

    category = "config"
    exit_code = 3


class FormatError(AvseError):
    """Malformed container file (bad magic, truncation, field violation)."""

    category = "format"
    exit_code = 4


class UsageError(AvseError):
    """API misused (backward without a recorded forward, empty dataset, ...)."""

    category = "usage"
    exit_code = 5


class DegenerateInputError(AvseError):
    """Input is silent or otherwise too degenerate for the operation."""

    category = "degenerate-input"
    exit_code = 6


class AlignmentError(AvseError):
    """Audio / visual stream lengths are inconsistent with the 25 fps contract."""

    category = "alignment"
    exit_code = 7


class NumericError(AvseError):
    """Non-finite values encountered where finiteness is required."""

    category = "numeric"
    exit_code = 8


class StreamProtocolError(AvseError):
    """Streaming ingestion contract violated (ordering, starvation, closed)."""

    category = "protocol"
    exit_code = 9
