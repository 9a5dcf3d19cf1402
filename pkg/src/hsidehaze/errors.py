"""Exception hierarchy shared across the package.

Every condition the library rejects maps to one of these classes so the
command line layer can translate failures into stable process exit codes:
usage mistakes exit 2, malformed data or unsatisfiable shapes exit 3, and
numeric divergence during optimization exits 4.
"""

from __future__ import annotations


class DehazeError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DehazeError):
    """A scalar argument or option is outside its documented range."""

    exit_code = 2


class DimensionError(DehazeError):
    """Array shapes disagree or violate a documented constraint."""

    exit_code = 3


class DomainError(DehazeError):
    """Array values are outside the domain an operation requires."""

    exit_code = 3


class FormatError(DehazeError):
    """A serialized file is malformed, truncated, or fails its checksum."""

    exit_code = 3


class ResourceError(DehazeError):
    """An input exceeds a configured resource bound."""

    exit_code = 3


class NumericError(DehazeError):
    """Optimization or evaluation produced non-finite values."""

    exit_code = 4
