"""Lightweight dual-stream scan/conv network for hyperspectral classification,
built on a from-scratch reverse-mode autodiff engine."""

from .model import ConfigError, MambaConvNet, ModelConfig, build_model
from .tensor import NumericError, ShapeError, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "MambaConvNet",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "Tensor",
    "backward",
    "build_model",
    "no_grad",
    "__version__",
]
