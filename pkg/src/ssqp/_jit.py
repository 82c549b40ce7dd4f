"""Numba switch for the hot kernels.

Set ``SSQP_DISABLE_NUMBA=1`` to run every kernel as plain numpy code. The
kernels are written in the subset of numpy that numba understands, so the
same source serves both paths.
"""

import os

NUMBA_DISABLED = os.environ.get("SSQP_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when numba is active, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if HAVE_NUMBA:
            return numba.njit(**kwargs)(f)
        return f

    if func is None:
        return wrap
    return wrap(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"
