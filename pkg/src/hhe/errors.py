"""Exception types raised across the package."""


class HHEError(Exception):
    """Base class for all package errors."""


class ZeroVector(HHEError, ValueError):
    """A vector (or weight row) has norm too small to normalize."""


class DimensionMismatch(HHEError, ValueError):
    pass


class ShapeMismatch(HHEError, ValueError):
    pass


class DegenerateBatch(HHEError, ValueError):
    """An anchor in the batch has no positive or no negative."""


class LabelOutOfRange(HHEError, ValueError):
    pass


class DegenerateWeights(HHEError, ValueError):
    pass


class InvalidArchitecture(HHEError, ValueError):
    pass


class InvalidConfig(HHEError, ValueError):
    pass


class DegenerateDataset(HHEError, ValueError):
    pass


class InsufficientIdentities(HHEError, ValueError):
    pass


class FormatError(HHEError, ValueError):
    """Malformed feature or model file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyGallery(HHEError, ValueError):
    pass


class NoRelevant(HHEError, ValueError):
    pass


class EmptyList(HHEError, ValueError):
    pass
