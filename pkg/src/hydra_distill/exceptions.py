"""Typed errors raised across the package.

Loaders and numeric kernels never return partial results; anything that
cannot be honored exactly raises one of these.
"""


class HydraDistillError(Exception):
    """Base class for all package errors."""


class ValidationError(HydraDistillError, ValueError):
    """An input was rejected (bad shape, bad distribution, out of range)."""


class TemperatureError(ValidationError):
    """Softmax temperature was not a positive finite number."""


class FormatError(HydraDistillError):
    """A file does not match its declared binary or text format."""


class CorruptionError(FormatError):
    """A file has a valid header but a truncated or inconsistent payload."""


class EmptyDatasetError(HydraDistillError):
    """A loader produced a dataset with no rows."""


class SchemaError(HydraDistillError):
    """A requested column or field does not exist."""


class ParseError(HydraDistillError):
    """A text row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConfigError(HydraDistillError):
    """An experiment or training configuration is invalid."""


class CheckpointError(HydraDistillError):
    """A checkpoint could not be written or read back (version, missing file,
    corrupt payload)."""


class TrainingError(HydraDistillError):
    """Training produced a non-finite loss or gradient.

    ``context`` identifies the failing unit (member seed, training phase).
    """

    def __init__(self, message: str, context: str | None = None):
        super().__init__(message if context is None else f"{message} ({context})")
        self.context = context
