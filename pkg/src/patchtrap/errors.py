"""Exception types raised across the package.

Every operation that can fail on bad input raises one of these instead of
letting a bare ValueError or IndexError escape, so callers (and the CLI) can
distinguish user mistakes from bugs.
"""

from __future__ import annotations


class PatchTrapError(Exception):
    """Base class for all package errors."""


class InputShapeError(PatchTrapError):
    """A tensor does not have the shape an operation requires."""


class MissingLabelsError(PatchTrapError):
    """An operation needs labels but the dataset has none."""


class InvalidRatioError(PatchTrapError):
    """A fraction-valued argument is outside [0, 1]."""


class LayoutError(PatchTrapError):
    """A sidebar layout is inconsistent with its frame."""


class PlacementError(PatchTrapError):
    """A trigger cannot be placed inside the image region."""


class BatchError(PatchTrapError):
    """A batch of frames is malformed for composition."""


class LabelError(PatchTrapError):
    """A class index is outside the model's output range."""


class StateError(PatchTrapError):
    """An operation was called in a state it cannot handle."""


class TrainingDivergedError(PatchTrapError):
    """Patch optimization produced a non-finite loss."""

    def __init__(self, message: str, iteration: int, clean_loss: float, attack_loss: float):
        super().__init__(message)
        self.iteration = iteration
        self.clean_loss = clean_loss
        self.attack_loss = attack_loss


class BoardSpecError(PatchTrapError):
    """A calibration board specification cannot be rendered."""


class FitError(PatchTrapError):
    """A transform fit failed (degenerate or insufficient data)."""


class AlignmentError(PatchTrapError):
    """Projected board geometry falls outside the photo bounds."""


class EvaluationError(PatchTrapError):
    """An evaluation was requested on unusable inputs."""


class ProbeError(PatchTrapError):
    """The activation-clustering probe cannot produce a verdict."""


class ConfigError(PatchTrapError):
    """An experiment config failed validation."""
