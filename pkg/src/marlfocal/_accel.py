"""Numba dispatch.

Hot kernels are compiled with ``numba.njit`` unless ``MARLFOCAL_NO_NUMBA`` is set
to a truthy value (or numba is missing), in which case the vectorised numpy
implementations are used instead.
"""
import os

_FLAG = os.environ.get("MARLFOCAL_NO_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` with numba when available; return it untouched otherwise."""
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
