"""Scan-kernel backend selection: compiled Cython when built, numpy otherwise.

Override with HSIMAMBA_SCAN_BACKEND=numpy|cython, or use_backend() at runtime
(the benchmark and the parity tests switch backends this way).
"""

from __future__ import annotations

import os

from . import _scan_np

try:
    from . import _scan_cy
except ImportError:
    _scan_cy = None

_BACKENDS = {"numpy": _scan_np}
if _scan_cy is not None:
    _BACKENDS["cython"] = _scan_cy


def _initial():
    requested = os.environ.get("HSIMAMBA_SCAN_BACKEND", "auto")
    if requested == "auto":
        return "cython" if _scan_cy is not None else "numpy"
    if requested not in _BACKENDS:
        raise RuntimeError(
            f"HSIMAMBA_SCAN_BACKEND={requested!r} unavailable; have {sorted(_BACKENDS)}"
        )
    return requested


_active = _initial()


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return _active


def use_backend(name):
    """Switch the active scan backend; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown scan backend {name!r}; have {sorted(_BACKENDS)}")
    prev = _active
    _active = name
    return prev


def scan_forward(abar, bbar, c, x):
    return _BACKENDS[_active].scan_forward(abar, bbar, c, x)


def scan_backward(abar, bbar, c, x, h, gy):
    return _BACKENDS[_active].scan_backward(abar, bbar, c, x, h, gy)
