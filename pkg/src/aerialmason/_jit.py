"""Optional numba acceleration.

Set ``AERIALMASON_NUMBA=0`` to run every kernel as plain numpy code. The flag
is read once at import time.
"""

import os

_FLAG = os.environ.get("AERIALMASON_NUMBA", "1").strip().lower()

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG not in ("0", "false", "no", "off")


def njit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


def python_impl(fn):
    """Return the uncompiled function behind a kernel."""
    return getattr(fn, "py_func", fn)
