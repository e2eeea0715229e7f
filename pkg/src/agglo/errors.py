"""Exception types shared across the pipeline stages."""


class AggloError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AggloError, ValueError):
    """Input data violates a documented precondition."""


class DegenerateHistogramError(InvalidInputError):
    """Otsu thresholding needs at least two occupied histogram bins."""


class InsufficientScalesError(InvalidInputError):
    """Box counting needs at least two usable box sizes."""


class NoSplitError(AggloError):
    """Raised internally when a node cannot be split."""


class LayoutMismatchError(InvalidInputError):
    """Feature layout fingerprint of a model does not match the data."""


class FitError(AggloError, RuntimeError):
    """A numerical fit failed or produced an invalid parameter."""
