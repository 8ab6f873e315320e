"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data/format
problems (config, archive, image decoding) exit 3, and numeric failures
(NaN in a result) exit 4.
"""


class VapsrError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VapsrError):
    """Tensor shapes are inconsistent with the requested operation."""


class ConfigError(VapsrError):
    """A model configuration violates one of its invariants."""


class NumericError(VapsrError):
    """A computation produced NaN or Inf from finite inputs."""


class ImageError(VapsrError):
    """An image file could not be read or decoded."""


class ArchiveError(VapsrError):
    """Base class for weight-archive problems."""


class ArchiveMagicError(ArchiveError):
    """The file does not start with the expected magic bytes."""


class ArchiveCrcError(ArchiveError):
    """The trailing checksum does not match the file contents."""


class ArchiveLayoutError(ArchiveError):
    """The byte layout is truncated or internally inconsistent."""


class ArchiveMismatchError(ArchiveError):
    """Archive contents disagree with the requested model configuration."""
