"""Exception hierarchy. Every error raised by the library derives from ContlearnError."""


class ContlearnError(Exception):
    """Base class for all library errors."""


class ShapeError(ContlearnError):
    """Tensor shapes or dimensions are invalid or incompatible."""


class ArgumentError(ContlearnError):
    """A scalar argument is out of its legal range."""


class ConfigError(ContlearnError):
    """A run configuration is malformed or references unknown components."""


class FormatError(ContlearnError):
    """A file on disk does not conform to its documented format."""


class DataError(ContlearnError):
    """Dataset content is unusable (empty split, bad label, ...)."""


class LabelError(DataError):
    """A class label is out of range for its classifier head."""


class StateError(ContlearnError):
    """An operation was called in an invalid lifecycle state."""


class TaskError(StateError):
    """A task id does not resolve to an existing classifier head."""


class NumericError(ContlearnError):
    """Non-finite values were produced where finite ones are required."""


class MetricError(ContlearnError):
    """A metric is undefined for the given input (e.g. BWT with one task)."""


class AggregationError(ContlearnError):
    """Run results with mismatched configurations cannot be aggregated."""


class ReportError(ContlearnError):
    """Report generation failed (missing artifacts, empty input)."""


class PlotError(ContlearnError):
    """Chart generation failed (missing or corrupt curve data)."""
