"""Exception types shared across the package."""


class Diffeo2DError(Exception):
    """Base class for all library errors."""


class GridMismatchError(Diffeo2DError):
    """Two objects that must live on the same grid do not."""


class NonConvergentError(Diffeo2DError):
    """Fixed-point inversion failed to reach its tolerance."""


class NotPSDError(Diffeo2DError):
    """A kernel pairing produced a significantly negative squared norm."""


class DegeneratePartitionError(Diffeo2DError):
    """Partition-of-unity weights cannot be normalized (near-zero total)."""


class MissingMomentaError(Diffeo2DError):
    """Path energy requested for velocities without their dual momenta."""


class ResidualTooLargeError(Diffeo2DError):
    """A composed-inverse residual exceeded the acceptable bound."""


class NonFiniteError(Diffeo2DError):
    """A numerical state became NaN or infinite."""


# --- file formats ---------------------------------------------------------

class FileFormatError(Diffeo2DError):
    """Base class for file parsing errors."""


class BadMagicError(FileFormatError):
    """A field file does not start with the expected magic string."""


class MalformedHeaderError(FileFormatError):
    """An image or field header could not be parsed."""


class HeaderMismatchError(FileFormatError):
    """A file header disagrees with what the caller required."""


class TruncatedPayloadError(FileFormatError):
    """A binary payload is shorter than the header promises."""


# --- configuration --------------------------------------------------------

class ConfigError(Diffeo2DError):
    """Base class for configuration-file errors."""


class UnknownKeyError(ConfigError):
    """A configuration key is not recognized (strict parsing)."""


class BadValueError(ConfigError):
    """A configuration value is malformed or out of range."""


class MissingKernelError(ConfigError):
    """A configuration file does not define a kernel block."""
