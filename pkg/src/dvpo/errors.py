"""Exception types shared across the package."""


class DvpoError(Exception):
    """Base class for all package errors."""


class ShapeError(DvpoError, ValueError):
    """Array dimensions do not line up."""


class NumericError(DvpoError, FloatingPointError):
    """A non-finite value showed up where a finite one is required."""


class ConfigError(DvpoError, ValueError):
    """Invalid configuration value.

    ``path`` names the offending field (e.g. ``tails.alpha``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        self.detail = message
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class DivergenceError(DvpoError, RuntimeError):
    """Training produced a non-finite or exploding loss."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
