"""Switch between numba-compiled kernels and their pure-numpy twins.

Set ``ZISAE_DISABLE_NUMBA=1`` before import to route every hot kernel
through the numpy implementation. Both variants stay importable so tests
and the benchmark can compare them directly.
"""
import os

DISABLE_ENV = "ZISAE_DISABLE_NUMBA"


def numba_requested():
    return os.environ.get(DISABLE_ENV, "0").strip().lower() not in ("1", "true", "yes")


try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and numba_requested()


def njit(fn):
    """Compile ``fn`` with numba when available; otherwise return it untouched."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def pick(nb_impl, np_impl):
    return nb_impl if USE_NUMBA else np_impl
