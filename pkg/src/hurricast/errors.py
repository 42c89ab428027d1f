"""Exception types shared across the package."""


class HurricastError(Exception):
    """Base class for all errors raised by this package."""


class TrackFormatError(HurricastError):
    """Track CSV file does not conform to the expected schema."""


class CadenceError(HurricastError):
    """Track records are not spaced at the expected time interval."""


class DimensionError(HurricastError):
    """Array shapes do not match the operation's requirements."""


class NumericalError(HurricastError):
    """A numerical routine failed to converge or produced non-finite values."""


class NotFittedError(HurricastError):
    """A model or scaler was used before being fitted."""


class NotFrozenError(HurricastError):
    """An extractor was queried for embeddings before being frozen."""


class ConfigError(HurricastError):
    """Invalid configuration value or unknown configuration key."""


class BundleFormatError(HurricastError):
    """Model bundle file is corrupt or truncated."""


class BundleVersionError(HurricastError):
    """Model bundle was written with an incompatible format version."""
