"""Exception hierarchy shared by every component of the fusion engine."""
from typing import Optional


class FusionError(Exception):
    """Base class for all errors raised by the fusion engine."""


class ConfigError(FusionError, ValueError):
    """Invalid run configuration or scenario specification."""


class DatasetError(FusionError, ValueError):
    """Malformed or unreadable dataset / trajectory file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        """Initialize the error.

        Args:
            message (str): What went wrong
            line_number (Optional[int]): 1-based line of the offending record
        """
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class GeometryError(FusionError, ValueError):
    """Degenerate geometric configuration."""


class PreintegrationError(FusionError, ValueError):
    """Invalid inertial or velocity preintegration input."""


class MeasurementError(FusionError, ValueError):
    """A measurement was used outside of its contract."""


class InitializationDeferred(FusionError):
    """Not enough information yet to bootstrap the estimator."""


class EstimationError(FusionError, RuntimeError):
    """The back-end could not produce an estimate."""


class EvaluationError(FusionError, ValueError):
    """Estimate and ground truth cannot be compared."""
