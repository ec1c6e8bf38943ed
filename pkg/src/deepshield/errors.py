"""Exception types shared across the package."""


class DeepShieldError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DeepShieldError):
    """Bad configuration: unknown key, wrong type, or out-of-range value."""


class DatasetError(DeepShieldError):
    """Dataset layout or content problem (missing frames, bad metadata, ...)."""


class MalformedLandmarksError(DatasetError):
    """Landmark file cannot be parsed or disagrees with the frame count."""


class TooShortVideoError(DatasetError):
    """Video has too few frames for the requested clip protocol."""


class DegenerateHullError(DeepShieldError):
    """Landmarks are collinear (or too few) so no convex hull exists."""


class BlendFailedError(DeepShieldError):
    """Blending failed repeatedly while composing a training batch."""


class NonFiniteLossError(DeepShieldError):
    """A training loss became NaN or infinite; the run is aborted."""
