"""Exception hierarchy.

Validation errors map to CLI exit code 2, numerical failures to exit code 3.
"""

from __future__ import annotations


class FkeError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ValidationError(FkeError):
    """Input rejected before any numerics ran."""

    exit_code = 2


class NumericalError(FkeError):
    """A computation could not meet its accuracy contract."""

    exit_code = 3


class WellPosednessViolation(ValidationError):
    """beta >= 2(alpha+gamma)H, so the solution does not exist."""


class RangeError(ValidationError):
    """A parameter or argument lies outside its admissible range."""


class DomainError(ValidationError):
    """An argument lies outside the domain of a function."""


class SingularAtOrigin(ValidationError):
    """The spectral density was requested at a point where it diverges."""


class ShapeMismatch(ValidationError):
    """Arrays or samples have incompatible shapes."""


class MissingManifest(ValidationError):
    """A report directory holds no run manifest."""


class TruncationFailure(NumericalError):
    """A truncated integral could not reach its tolerance within the node budget."""


class NegativeVarianceArtifact(NumericalError):
    """A quadratic form came out negative beyond rounding tolerance."""


class NotPSD(NumericalError):
    """A covariance matrix stayed indefinite through the whole jitter ladder."""


class TruncationTooSmall(NumericalError):
    """A spectral truncation captures too little of the target variance."""


class DegenerateFit(NumericalError):
    """A regression has too little spread to determine a slope."""


class NonConvergence(NumericalError):
    """An iterative solver stalled above its tolerance."""


class GridTooCoarse(UserWarning):
    """A hitting target is small compared with the field's movement inside one grid cell."""
