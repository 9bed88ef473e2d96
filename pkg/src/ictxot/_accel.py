"""Numba switch.

Set ``ICTXOT_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful when
numba is missing, for debugging, or for benchmarking both paths).
"""

import os

_disabled = os.environ.get("ICTXOT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old and numba warns on every import
        numba.config.THREADING_LAYER = "workqueue"
    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(fn):
            return fn

        return decorator

    prange = range


def set_threads(n):
    """Cap the numba thread pool; a no-op on the numpy path."""
    if HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def thread_count_from_env():
    raw = os.environ.get("ICTXOT_THREADS")
    return int(raw) if raw and raw.isdigit() else None
