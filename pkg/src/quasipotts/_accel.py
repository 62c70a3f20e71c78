"""Numba availability and the switch between compiled and pure-numpy kernels.

Set ``QUASIPOTTS_DISABLE_NUMBA=1`` to force the numpy code paths even when
numba is installed.  The flag is read once at import time.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FALSEY = {"", "0", "false", "no", "off"}

USE_NUMBA = HAVE_NUMBA and (
    os.environ.get("QUASIPOTTS_DISABLE_NUMBA", "").strip().lower() in _FALSEY
)


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable.

    Compilation is independent of ``USE_NUMBA`` so that tests and the
    benchmark can always reach both variants.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
