"""Exception types shared across the package."""


class PixelPushError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(PixelPushError):
    """Operands have incompatible grid, kernel, or channel dimensions."""


class ZeroMass(PixelPushError):
    """A distribution has (numerically) no mass left to normalize."""


class FormatError(PixelPushError):
    """A container file has a bad magic string or unsupported version."""


class TruncatedFile(PixelPushError):
    """A container file ended before the declared payload was read."""


class OutOfBounds(PixelPushError):
    """A pixel or action coordinate lies outside the world grid."""


class PlacementFailure(PixelPushError):
    """Rejection sampling could not place the requested scene objects."""


class RadiusTooSmall(PixelPushError):
    """A true per-step displacement exceeds the flow kernel radius."""


class NonFiniteLoss(PixelPushError):
    """Training produced a NaN or infinite loss."""


class DegenerateCovariance(PixelPushError):
    """The elite covariance fit produced non-finite entries."""


class NoGoal(PixelPushError):
    """A step or run was requested on a session with an empty goal."""
