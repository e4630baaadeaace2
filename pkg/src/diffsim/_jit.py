"""Optional numba compilation for the float64 kernels.

Set ``DIFFSIM_DISABLE_NUMBA=1`` to run every kernel as plain numpy/Python.
Results are identical either way; only speed differs.
"""

import os

_disabled = os.environ.get("DIFFSIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


__all__ = ["njit", "HAVE_NUMBA"]
