"""
Exception hierarchy for the toolkit.

Library code raises these; entry points translate them (exit codes in the
CLI, ``{"error": ...}`` dicts in the tool server).
"""


class GradRegError(Exception):
    """Base class for every error raised by gradreg."""


class InvalidParameterError(GradRegError, ValueError):
    """A numeric parameter is outside its documented range."""


class ShapeError(GradRegError, ValueError):
    """Array dimensions do not chain."""


class FormatError(GradRegError):
    """A binary file carries the wrong magic number or tag."""


class LengthError(GradRegError):
    """A binary file ends before its declared payload."""


class InvalidLabelError(GradRegError, ValueError):
    """A class label is outside [0, K)."""


class DivergedTrainingError(GradRegError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, step {step} (loss={loss})")


class EstimatorUndefinedError(GradRegError):
    """The near-zero density estimator has nothing to fit."""


class ConfigError(GradRegError):
    """A run configuration file is malformed or names an unknown key."""
