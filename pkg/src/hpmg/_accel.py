"""Switch between numba-compiled kernels and their pure-numpy fallbacks.

Set ``HPMG_DISABLE_NUMBA=1`` in the environment before importing ``hpmg``
to force the numpy code paths (useful for debugging and for the kernel
benchmark).
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("HPMG_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(*args, **kws):
    """``numba.njit`` with caching on; a no-op decorator without numba."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kws.setdefault("cache", True)
    return numba.njit(*args, **kws)


def select(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
