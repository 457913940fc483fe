"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``WARDSENSE_DISABLE_JIT``
is unset (or set to ``0``/``false``). Both implementations stay importable as
``numpy_impl`` and ``numba_impl`` so tests and the benchmark can compare them.
"""

import os

from . import _numpy as numpy_impl

_flag = os.environ.get("WARDSENSE_DISABLE_JIT", "").strip().lower()
JIT_DISABLED = _flag not in ("", "0", "false", "no")

try:
    from . import _numba as numba_impl
except ImportError:  # numba not installed
    numba_impl = None

USE_NUMBA = numba_impl is not None and not JIT_DISABLED
backend = numba_impl if USE_NUMBA else numpy_impl
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

window_extreme = backend.window_extreme
loess_fit = backend.loess_fit
knn_query = backend.knn_query
nan_euclidean = backend.nan_euclidean
rank_sum_counts = backend.rank_sum_counts
nms = backend.nms

__all__ = [
    "BACKEND_NAME",
    "USE_NUMBA",
    "knn_query",
    "loess_fit",
    "nan_euclidean",
    "nms",
    "numba_impl",
    "numpy_impl",
    "rank_sum_counts",
    "window_extreme",
]
