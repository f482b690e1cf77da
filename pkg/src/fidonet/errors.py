"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3.
"""


class FidonetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FidonetError):
    """Tensor or feature shapes violate an operation's contract."""


class ConfigError(FidonetError):
    """Invalid or inconsistent configuration (usage-level problem)."""


class DataError(FidonetError):
    """Problems with external data: files, manifests, labels."""


class AudioError(DataError):
    """Unreadable, unsupported, or empty audio input."""


class ManifestError(DataError):
    """Malformed manifest file or record."""


class EmbeddingError(DataError):
    """Malformed embedding file."""


class CheckpointError(DataError):
    """Malformed or incompatible checkpoint file."""


class NumericError(FidonetError):
    """Non-finite values or failed numeric contracts at runtime."""
