"""Exception types raised across the package."""


class BCLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BCLabError, ValueError):
    """Invalid parameters or configuration, detected before any compute."""


class NumericError(BCLabError, ArithmeticError):
    """A numerical procedure failed (non-convergence, orbit escaping its domain)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CalibrationError(BCLabError):
    """A calibration orbit cannot resolve the requested target measures."""


class ReportError(BCLabError):
    """Run outputs are missing or inconsistent with their manifest."""
