"""Backend selection for the hot loops.

The compiled extension is used when it imports; set
``PROMINENCE_PURE_PYTHON=1`` to force the numpy/pure-Python fallback.
Functions also take ``backend="cython"|"python"`` per call.
"""
import os

import numpy as np

from prominence import _purepy

try:
    from prominence import _kernels
except ImportError:  # extension not built
    _kernels = None

HAVE_EXTENSION = _kernels is not None
_BACKENDS = {"python": _purepy}
if HAVE_EXTENSION:
    _BACKENDS["cython"] = _kernels

if os.environ.get("PROMINENCE_PURE_PYTHON") == "1" or not HAVE_EXTENSION:
    BACKEND = "python"
else:
    BACKEND = "cython"


def _impl(backend):
    name = BACKEND if backend is None else backend
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_BACKENDS)}") from None


def mbd_raster(img, seeds, passes: int, backend=None) -> np.ndarray:
    """Raw raster-scan barrier distances; ``seeds`` is a boolean mask."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    seeds = np.ascontiguousarray(seeds, dtype=np.uint8)
    return _impl(backend).mbd_raster(img, seeds, int(passes))


def fast_response(img, threshold: int, margin: int, backend=None) -> np.ndarray:
    """FAST-9 corner score map, zero where the segment test fails."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    return _impl(backend).fast_response(img, int(threshold), int(margin))
