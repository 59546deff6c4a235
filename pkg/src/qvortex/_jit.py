"""Numba shim.

Set ``QVORTEX_DISABLE_JIT=1`` to force the pure-numpy code paths (also used
automatically when numba is not importable).
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("QVORTEX_DISABLE_JIT", "").strip().lower()
JIT_REQUESTED = _FLAG not in ("1", "true", "yes", "on")

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAVE_NUMBA = False

USE_JIT = JIT_REQUESTED and HAVE_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or an identity decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda func: func
    kwargs.setdefault("cache", True)
    return nb.njit(*args, **kwargs)
