"""Exception hierarchy shared by every module."""


class SpinecarveError(Exception):
    """Base class for all errors raised by spinecarve."""


class DimensionMismatch(SpinecarveError, ValueError):
    pass


class AllForeground(SpinecarveError, ValueError):
    """Mask has no background voxel, so a distance to the boundary is undefined."""


class AllBackground(SpinecarveError, ValueError):
    """Mask has no foreground voxel, so a distance to the boundary is undefined."""


class EmptySamples(SpinecarveError, ValueError):
    pass


class NonPositiveBandwidth(SpinecarveError, ValueError):
    pass


class CoordinateOutOfRange(SpinecarveError, ValueError):
    pass


class InconsistentDims(SpinecarveError, ValueError):
    pass


class EmptyAtlas(SpinecarveError, ValueError):
    pass


class NonFiniteForce(SpinecarveError, FloatingPointError):
    """A force field contains NaN or Inf, usually a density floor set to zero."""


class ModelFormatError(SpinecarveError):
    pass


class FormatVersionMismatch(ModelFormatError):
    pass


class ChecksumMismatch(ModelFormatError):
    pass


class ImageFormatError(SpinecarveError, ValueError):
    pass


class InvalidSpec(SpinecarveError, ValueError):
    pass


class DegenerateSample(SpinecarveError, ValueError):
    pass


class ConfigError(SpinecarveError, ValueError):
    pass
