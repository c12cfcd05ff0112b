"""Bottleneck-feature exporter.

Walks a class-per-folder image tree through a frozen Inception-v3
backbone and writes the activations as an FTC1 feature container, the
same binary format the demnet trainer consumes in hybrid mode.  The two
packages share nothing but that wire format.
"""

from .container import container_write
from .export import (
    CLASS_NAMES,
    ClassTableError,
    ExportError,
    ExportSpec,
    MissingWeightsError,
    export_features,
)

__all__ = [
    "CLASS_NAMES",
    "ClassTableError",
    "ExportError",
    "ExportSpec",
    "MissingWeightsError",
    "container_write",
    "export_features",
]
