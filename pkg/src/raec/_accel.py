"""Optional numba acceleration.

Set ``RAEC_DISABLE_NUMBA=1`` to force the pure-numpy code paths.  The flag is
read once at import time.
"""

import os

_DISABLED = os.environ.get("RAEC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by RAEC_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
