"""Numba acceleration switch.

Hot numeric kernels in :mod:`eegspat.kernels` exist in two variants: explicit
loops compiled with ``numba.njit`` and a vectorized pure-numpy fallback.  The
active variant is chosen once at import time:

* ``EEGSPAT_NO_NUMBA=1`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy when not.

Both variants implement identical arithmetic; ``benchmarks/bench_kernels.py``
compares their throughput on the shapes this package actually runs.
"""

import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    numba = None
    HAS_NUMBA = False

_DISABLED = os.environ.get("EEGSPAT_NO_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(fn):
    """Compile ``fn`` with numba when the accelerated path is active.

    Returns ``fn`` unchanged on the numpy path so the same source serves as
    the fallback implementation.
    """
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn
