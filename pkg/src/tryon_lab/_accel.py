"""Numba availability and the env switch that forces the pure-numpy path.

Set ``TRYON_LAB_DISABLE_NUMBA=1`` before import to run every kernel through
its numpy twin. The choice is made once, at import of :mod:`tryon_lab.kernels`.
"""

import functools
import os

DISABLE_ENV = "TRYON_LAB_DISABLE_NUMBA"

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False


def numba_requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in {"1", "true", "yes", "on"}


USE_NUMBA = HAVE_NUMBA and numba_requested()

if HAVE_NUMBA:
    njit = functools.partial(nb.njit, cache=True, nogil=True)
else:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
