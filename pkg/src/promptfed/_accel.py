"""Numba switch for the hot kernels.

Set ``PROMPTFED_DISABLE_NUMBA=1`` to force the pure-numpy fallbacks. The
flag is read once at import time.
"""

import os

_FLAG = "PROMPTFED_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _numba_requested():
        raise ImportError("disabled by " + _FLAG)
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def jit(func):
    """Compile ``func`` with numba when enabled; otherwise return ``None``.

    Callers keep a numpy implementation next to each kernel and dispatch on
    ``HAVE_NUMBA``.
    """
    if not HAVE_NUMBA:
        return None
    return _njit(cache=True, nogil=True)(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
