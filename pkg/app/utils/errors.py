"""
Exception types shared by the calibration library and the experiment harness.
"""


class CascadeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CascadeError, ValueError):
    """Invalid or infeasible experiment configuration (CLI exit code 2)."""


class NumericalError(CascadeError, ArithmeticError):
    """Non-finite values where finite ones are required (CLI exit code 3)."""
