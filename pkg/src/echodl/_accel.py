"""Numba dispatch for the hot inner loops.

Set ``ECHODL_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
"""

import os

_disabled = os.environ.get("ECHODL_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def use_numba():
    return HAVE_NUMBA
