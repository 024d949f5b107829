"""Activation snapshot exporter for the smoe saliency tools."""

from .capture import (
    CaptureSpec,
    ExportResult,
    TapPoint,
    build_model,
    check_architecture,
    export_activations,
    preprocess_image,
)
from .errors import ExporterError, UsageError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "CaptureSpec",
    "ExportResult",
    "TapPoint",
    "build_model",
    "check_architecture",
    "export_activations",
    "preprocess_image",
    "ExporterError",
    "UsageError",
    "ValidationError",
]
