"""Exception hierarchy shared across the package.

Callers that want a single catch-all can handle :class:`SmoeError`;
the subclasses distinguish malformed bytes, bad data values, and bad
API usage so the CLI can report which stage failed.
"""


class SmoeError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SmoeError):
    """A file or byte stream is not in the expected serialized format."""


class ValidationError(SmoeError):
    """Data is well-formed but violates a documented invariant."""


class UsageError(SmoeError):
    """The caller broke an API precondition."""
