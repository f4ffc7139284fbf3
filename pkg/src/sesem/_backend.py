"""Kernel backend selection.

Hot loops are compiled with numba when it is importable.  Setting
``SESEM_DISABLE_NUMBA=1`` forces the vectorized numpy implementations,
which are kept numerically equivalent and are exercised by the test suite.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None

DISABLED = os.environ.get("SESEM_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLED


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched without numba."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
