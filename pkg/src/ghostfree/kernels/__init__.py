"""Hot numeric kernels with two interchangeable backends.

The numba backend is used by default. Set ``GHOSTFREE_NO_NUMBA=1`` (or have
numba missing) to run the pure-numpy backend instead. Both backends expose
the same functions and are tested against each other.
"""
import os

from . import _numpy

BACKEND = "numpy"

if os.environ.get("GHOSTFREE_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency
        _impl = _numpy
else:
    _impl = _numpy

srgb_to_lab = _impl.srgb_to_lab
resize_bilinear = _impl.resize_bilinear
confusion_counts = _impl.confusion_counts
gaussian_filter = _impl.gaussian_filter


def gaussian_window(size=11, sigma=1.5):
    import numpy as np

    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(r**2) / (2.0 * sigma**2))
    return w / w.sum()


__all__ = [
    "BACKEND",
    "srgb_to_lab",
    "resize_bilinear",
    "confusion_counts",
    "gaussian_filter",
    "gaussian_window",
]
