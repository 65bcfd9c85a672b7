"""Numba switch.

Set ``PERTURBLEARN_DISABLE_NUMBA=1`` to force the pure-numpy kernels even
when numba is importable. The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("PERTURBLEARN_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(func):
    """``numba.njit(cache=True)`` when enabled, otherwise the function unchanged."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def numba_version() -> str | None:
    return numba.__version__ if HAS_NUMBA else None
