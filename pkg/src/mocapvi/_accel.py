"""Optional numba acceleration.

Hot kernels are written twice: a vectorized numpy version and a per-element
loop version compiled with ``numba.njit``.  Set ``MOCAPVI_DISABLE_NUMBA=1``
to force the numpy path (useful for debugging and for the benchmark).
"""
import os

try:
    import numba
    has_numba = True
except ImportError:  # pragma: no cover
    numba = None
    has_numba = False


def numba_enabled():
    flag = os.environ.get("MOCAPVI_DISABLE_NUMBA", "").strip().lower()
    return has_numba and flag not in ("1", "true", "yes", "on")


def try_njit(fn=None, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)

    def wrap(f):
        if not has_numba:
            return f
        return numba.njit(**kwargs)(f)

    if fn is None:
        return wrap
    return wrap(fn)
