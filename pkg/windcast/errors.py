"""
Exception types raised by windcast.
"""

from typing import Optional


class WindcastError(Exception):
    """Base class for all windcast errors."""


class DataError(WindcastError, ValueError):
    """Invalid or insufficient input data."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class ConfigError(WindcastError, ValueError):
    """Invalid run configuration."""


class UsageError(ConfigError):
    """Bad command-line usage."""


class ShapeError(WindcastError, ValueError):
    """Tensor or parameter dimensions do not agree."""


class GraphError(WindcastError, RuntimeError):
    """Backward pass requested without a recorded forward pass."""


class FitError(WindcastError, RuntimeError):
    """A model could not be fitted (singular system, no convergence, ...)."""


class CycleError(FitError):
    """An error raised inside a backtest cycle, tagged with the cycle index."""

    def __init__(self, cycle: int, cause: Exception):
        super().__init__(f"cycle {cycle}: {cause}")
        self.cycle = cycle
        self.cause = cause
