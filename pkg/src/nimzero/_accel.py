"""Numba switch.

Hot kernels come in two flavours: an explicit-loop version compiled with
``numba.njit`` and a vectorised numpy version. ``NIMZERO_DISABLE_NUMBA=1``
selects the numpy path at import time. Both flavours stay importable so the
test-suite and the benchmark can compare them directly.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None

_FLAG = "NIMZERO_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and _numba_requested()


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable.

    Compilation happens even when the numpy path is selected so that the two
    implementations can be cross-checked; without numba the loop version
    still runs, just slowly.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def backend():
    return "numba" if USE_NUMBA else "numpy"
