"""Exception hierarchy shared by the engines and the CLI."""

from __future__ import annotations


class PassportLabError(Exception):
    """Base class for every error raised by :mod:`passportlab`."""


class ArgumentError(PassportLabError, ValueError):
    """Invalid or inconsistent arguments (dimension mismatch, bad ranges)."""


class NotPSDError(ArgumentError):
    """A matrix that must be positive semidefinite is not (beyond tolerance)."""


class ConfigurationError(PassportLabError, ValueError):
    """Grid/solver/run configuration is unusable (e.g. explicit stability bound violated)."""


class DivergenceError(PassportLabError, ArithmeticError):
    """Non-finite values appeared while time stepping."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (time step {step})")
        self.step = step


class StrategyInfeasibleError(PassportLabError, ValueError):
    """A strategy produced a control outside its admissible set."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (time index {step})")
        self.step = step


class HypothesisError(PassportLabError):
    """The hypotheses of a structural check are not met, so the check refuses to run."""
