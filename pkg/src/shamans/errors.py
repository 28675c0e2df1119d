"""Exception hierarchy shared across the package."""


class ShamansError(Exception):
    """Base class for all package errors."""


class FormatError(ShamansError):
    """Malformed or unsupported file content (bad magic, version, encoding)."""


class TruncationError(FormatError):
    """File ends before the payload declared by its header."""


class GeometryError(ShamansError):
    """Inconsistent array/grid geometry (e.g. a source on top of a microphone)."""


class NormalizationError(ShamansError):
    """A vector that must be normalized is identically zero."""


class ShapeError(ShamansError):
    """Mismatched shapes, grids or frequency axes between operands."""


class ParameterError(ShamansError):
    """Parameter outside its documented range."""


class EstimationError(ShamansError):
    """Statistical estimation impossible on the given data."""


class SingularSystemError(ShamansError):
    """Unregularized linear system is singular or too ill-conditioned to solve."""


class SceneSpecError(ShamansError):
    """Invalid synthetic scene description."""


class UndefinedMetricError(ShamansError):
    """Metric undefined for the given inputs (e.g. AUC with one class)."""
