"""Backend selection for the hot kernels.

Kernels are written once and compiled with numba when available.  Setting
``RASCHMC_BACKEND=numpy`` (or running without numba installed) swaps in the
vectorised numpy implementations instead; generic routines decorated with
:func:`njit` then run as ordinary Python.
"""

import os

_requested = os.environ.get("RASCHMC_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"RASCHMC_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

USE_NUMBA = _requested == "numba" and _numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` on the numba backend, identity otherwise."""
    if func is None:
        return lambda f: njit(f, **kwargs)
    if not USE_NUMBA:
        return func
    kwargs.setdefault("cache", True)
    return _numba.njit(**kwargs)(func)
