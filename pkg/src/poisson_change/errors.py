"""Exception types shared across the package."""

from __future__ import annotations


class InvalidParameterError(ValueError):
    """A numeric parameter lies outside its domain."""


class InvalidIntervalError(ValueError):
    """An interval (tau1, tau2] is empty-reversed or leaves [0, 1]."""


class DegenerateWindowError(InvalidIntervalError):
    """A window has zero length, or full length where a complement is needed."""


class UnsupportedParameterError(ValueError):
    """A parameter is valid mathematically but outside what we can evaluate."""


class UnsupportedScaleError(ValueError):
    """The scale L is too small for a grid that depends on floor(log2 L)."""


class SpecError(ValueError):
    """A detector specification is inconsistent with its family."""


class CalibrationRequiredError(LookupError):
    """A critical value is missing from the store and autocalibration is off."""


class CalibrationFailureError(RuntimeError):
    """The min-p dichotomy could not bracket a feasible level."""


class BudgetExceededError(RuntimeError):
    """A Monte Carlo request would exceed the configured work budget."""


class NumericFailureError(RuntimeError):
    """A root search did not bracket its target."""


class EventFileError(ValueError):
    """An event file could not be parsed."""
