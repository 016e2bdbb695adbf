"""Optional numba acceleration.

Kernels in :mod:`liftkit._kernels` are written in the numpy subset numba
understands and decorated with :func:`jit`. When numba is importable and
``LIFTKIT_DISABLE_NUMBA`` is unset (or ``0``), they are compiled with
``njit``; otherwise the decorator is a no-op and the same functions run as
plain numpy. Either way the original Python function stays reachable as
``kernel.py_func``, which is handy when stepping through a kernel in a
debugger. The backend is fixed at import time.
"""

import os
import warnings

_FLAG = os.environ.get("LIFTKIT_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by LIFTKIT_DISABLE_NUMBA")
    import numba
except ImportError as exc:
    numba = None
    if not _DISABLED:
        warnings.warn(f"numba unavailable ({exc}); using the pure-numpy kernels")

USE_NUMBA = numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def jit(func):
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    func.py_func = func
    return func
