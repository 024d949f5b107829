class ExporterError(Exception):
    """Base class for everything this package raises on purpose."""


class UsageError(ExporterError):
    """The caller asked for something the exporter does not support."""


class ValidationError(ExporterError):
    """A captured tensor does not match the documented architecture."""
