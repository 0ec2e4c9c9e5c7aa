"""Kernel backend selection.

The hot inner loops (3x3 convolutions and 2x2 max-pooling, forward and
backward) exist twice: a numba ``@njit`` implementation and a pure-numpy
fallback built on im2col + BLAS.  The active backend is chosen by the
``INTERSEG_BACKEND`` environment variable (``numba`` or ``numpy``) and can
be overridden at runtime with :func:`set_backend`.  When numba is not
importable the numpy path is used automatically.

Both backends compute the same quantities; they differ only in summation
order, so results agree to floating-point tolerance rather than bitwise.
``benchmarks/backend_bench.py`` compares their speed.
"""
from __future__ import annotations

import os

from . import numpy_ops

_ENV_VAR = "INTERSEG_BACKEND"
_VALID = ("numba", "numpy")

try:
    from . import numba_ops

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    numba_ops = None
    _HAVE_NUMBA = False


def _default_backend() -> str:
    name = os.environ.get(_ENV_VAR, "numba").strip().lower()
    if name not in _VALID:
        raise ValueError(f"{_ENV_VAR} must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        return "numpy"
    return name


_active = _default_backend()


def get_backend() -> str:
    """Name of the backend currently serving kernel calls."""
    return _active


def set_backend(name: str) -> str:
    """Select ``numba`` or ``numpy`` at runtime; returns the previous name."""
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    previous = _active
    _active = name
    return previous


def _ops():
    return numba_ops if _active == "numba" else numpy_ops


def conv3x3(x, w):
    """Same-padded stride-1 3x3 convolution: (N,Ci,H,W) x (Co,Ci,3,3) -> (N,Co,H,W)."""
    return _ops().conv3x3(x, w)


def conv3x3_dw(x, dy):
    """Weight gradient of :func:`conv3x3`: (N,Ci,H,W) x (N,Co,H,W) -> (Co,Ci,3,3)."""
    return _ops().conv3x3_dw(x, dy)


def maxpool2(x):
    """2x2 stride-2 max pool: (N,C,H,W) -> ((N,C,H/2,W/2), argmax index in 0..3)."""
    return _ops().maxpool2(x)


def maxpool2_bwd(dy, idx):
    """Scatter pooled gradients back to input resolution."""
    return _ops().maxpool2_bwd(dy, idx)
