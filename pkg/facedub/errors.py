"""
Error hierarchy for FaceDub.

Every error raised by the package derives from FaceDubError, itself a RuntimeError.
Validation errors map to CLI exit code 2, numerical errors to exit code 3.
"""

from typing import Optional


class FaceDubError(RuntimeError):
    """Base class for all FaceDub errors."""

    exit_code = 1


class ValidationError(FaceDubError):
    """Inputs violate a documented precondition."""

    exit_code = 2


class InvalidParameter(ValidationError, ValueError):
    """A scalar or configuration parameter is out of its allowed range."""


class ShapeError(ValidationError, ValueError):
    """Array or tensor shapes are incompatible."""


class DegenerateHull(ValidationError):
    """Fewer than three points, or all points collinear."""


class DegenerateCrop(ValidationError):
    """A crop box collapsed to zero width or height."""


class FormatError(ValidationError):
    """A file does not follow its documented format."""


class InsufficientFrames(ValidationError):
    """A clip is too short for the requested sampling."""


class LengthMismatch(ValidationError):
    """Driving audio is shorter than the source video."""


class ContractError(ValidationError):
    """An object is used in a state its contract forbids (e.g. an unfrozen scorer)."""


class NumericalError(FaceDubError):
    """Non-finite values or undefined statistics."""

    exit_code = 3

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class TrainingDivergence(NumericalError):
    """Training failed to reach its target or produced non-finite losses."""

    def __init__(self, message: str, accuracy: Optional[float] = None, checkpoint_path: Optional[str] = None):
        super().__init__(message, checkpoint_path=checkpoint_path)
        self.accuracy = accuracy
