"""Numba switch.

Kernels in :mod:`phenoglrm._kernels` come in pairs: an explicit-loop version
compiled with numba and a vectorized numpy version. ``PHENOGLRM_DISABLE_NUMBA=1``
(or numba being absent) selects the numpy path at import time.
"""
import os

_FLAG = os.environ.get("PHENOGLRM_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(func):
    """Compile ``func`` in nopython mode when numba is available, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
