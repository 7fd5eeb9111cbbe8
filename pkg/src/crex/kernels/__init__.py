"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the per-instance forward/backward pass and
the AdamW update; the numpy backend is a vectorized pure-numpy fallback with
identical function signatures. Selection happens once at import time:
setting ``CREX_NO_NUMBA=1`` (or any value other than 0/false/no) forces the
numpy path, as does an unavailable numba installation.

Both backends are importable directly (``crex.kernels.numpy_impl``,
``crex.kernels.numba_impl``) for cross-checking and benchmarks.
"""

import os


def _numba_disabled() -> bool:
    flag = os.environ.get("CREX_NO_NUMBA", "").strip().lower()
    return flag not in ("", "0", "false", "no")


if _numba_disabled():
    from . import numpy_impl as _impl

    ACTIVE_BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _impl

        ACTIVE_BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl

        ACTIVE_BACKEND = "numpy"


def get_kernels():
    """The module implementing the active backend."""
    return _impl


def active_backend() -> str:
    return ACTIVE_BACKEND
