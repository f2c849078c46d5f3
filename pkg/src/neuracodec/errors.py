"""Exception types shared across the package."""


class NeuracodecError(Exception):
    """Base class for all errors raised by this package."""


class KeyFormatError(NeuracodecError, ValueError):
    """Malformed master key material (wrong length, bad hex digit)."""


class ConfigError(NeuracodecError, ValueError):
    """Encoder configuration violates one of its constraints."""


class TensorFileError(NeuracodecError, ValueError):
    """Corrupt or unsupported tensor file."""


class DatasetError(NeuracodecError, ValueError):
    """Problem with a dataset directory, image file, or manifest."""
