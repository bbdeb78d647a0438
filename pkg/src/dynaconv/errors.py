"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value is outside the allowed option space."""


class DataFormatError(ValueError):
    """A file or byte stream does not match its declared format."""


class MagicError(DataFormatError):
    """Leading magic bytes are wrong for the expected container."""


class VersionError(DataFormatError):
    """Container version is not supported."""


class TruncationError(DataFormatError):
    """Byte stream ended before the declared content."""


class FingerprintError(DataFormatError):
    """A stored fingerprint does not match the expected model spec."""


class StateError(RuntimeError):
    """An operation was invoked outside its required execution state."""
