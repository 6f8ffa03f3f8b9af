"""Exception hierarchy shared by the trilateration modules."""
from typing import Optional


class TrilaterationError(Exception):
    """Base class for all package errors."""


class DomainError(TrilaterationError, ValueError):
    """A numeric input lies outside the domain of an operation."""


class UnlocalizableError(TrilaterationError):
    """An ensemble holds too few converged fits to quote a precision."""


class InsufficientDataError(TrilaterationError, ValueError):
    """Not enough sweep records survive filtering to fit a scaling band."""


class ConfigError(TrilaterationError, ValueError):
    """A run configuration is malformed or incomplete."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class OutputError(TrilaterationError, OSError):
    """An output file could not be written."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(message)
        self.path = path
