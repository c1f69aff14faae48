"""Numba switch for the hot kernels.

Set ``ONEBIT_MIMO_NO_NUMBA=1`` to force the pure-numpy code paths. Either
path must give the same numbers; the tests check both.
"""
import os

_off = os.environ.get("ONEBIT_MIMO_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _off not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None and not NUMBA_DISABLED


def njit(func=None, **kwargs):
    """``numba.njit`` with caching, or identity when numba is off."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if numba is None:
            return f
        return numba.njit(**kwargs)(f)

    if func is not None:
        return wrap(func)
    return wrap


def pick(jitted, fallback):
    """Return the jitted kernel if numba is enabled, else the numpy one."""
    return jitted if HAVE_NUMBA else fallback
