"""Errors raised across the engine"""


class OwsolError(Exception):
    """Base class for every domain failure."""


class ConfigError(OwsolError):
    """Invalid, missing or unparseable configuration (CLI exit code 2)."""


class ConfigInvalid(ConfigError):
    """A configuration object violates its invariants."""


class UnknownCategory(OwsolError):
    pass


class UnknownClass(OwsolError):
    pass


class EmptyClass(OwsolError):
    pass


class TooFewPoints(OwsolError):
    pass


class RangeInvalid(OwsolError):
    pass


class ShapeMismatch(OwsolError):
    pass


class DegenerateNorm(OwsolError):
    pass


class EmptyComponent(OwsolError):
    pass


class LengthMismatch(OwsolError):
    pass


class MissingPrediction(OwsolError):
    pass


class LabelAccessDenied(OwsolError):
    """Training code asked for the label of a sample outside the labeled set."""


class ConvergenceError(OwsolError):
    """An iterative routine broke one of its monotonicity guarantees."""


class TensorFormatError(OwsolError):
    """A tensor file is malformed (CLI exit code 3)."""
