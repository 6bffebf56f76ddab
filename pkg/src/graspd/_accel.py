"""Numba switch for the hot kernels.

Set ``GRASPD_NUMBA=0`` to force the pure-numpy code paths (useful for
debugging or on platforms without numba).
"""
import os

try:
    import numba as _nb
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover
    _nb = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("GRASPD_NUMBA", "1") not in ("0", "false", "no")


def njit(fn=None, **kwargs):
    """``numba.njit(cache=True)`` when numba is present, identity otherwise."""
    opts = {"cache": True, "fastmath": False}
    opts.update(kwargs)

    def wrap(f):
        if _nb is None:
            return f
        return _nb.njit(**opts)(f)

    if fn is None:
        return wrap
    return wrap(fn)
