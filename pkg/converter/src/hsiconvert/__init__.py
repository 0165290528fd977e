"""MATLAB .mat to HSIC/HSIL dataset converter."""

from .convert import ConversionError, ConversionManifest, convert, verify
from .formats import FormatError, read_cube, read_labels, write_cube, write_labels

__version__ = "0.1.0"

__all__ = [
    "ConversionError",
    "ConversionManifest",
    "FormatError",
    "convert",
    "verify",
    "read_cube",
    "read_labels",
    "write_cube",
    "write_labels",
    "__version__",
]
