"""Backend selection for the hot numerical kernels.

The iterative kernels (simplex pivoting, ADMM iterations) run either as
numba ``@njit``-compiled machine code or as plain NumPy bytecode.  The
backend is picked once at import time:

* ``H2MG_BACKEND=numba``  force JIT compilation; raise if numba is missing.
* ``H2MG_BACKEND=numpy``  force the pure-NumPy fallback (no compilation,
  useful for debugging and for platforms without a working numba).
* unset / ``auto``        use numba when importable, else fall back.

Both paths execute the same source functions and produce identical results;
``benchmarks/bench_backends.py`` compares their speed.
"""

from __future__ import annotations

import os

_requested = os.environ.get("H2MG_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"H2MG_BACKEND must be 'numba', 'numpy' or 'auto', got {_requested!r}"
    )

BACKEND = "numpy"
_njit = None

if _requested in ("auto", "numba"):
    try:
        from numba import njit as _njit  # noqa: F401

        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise RuntimeError(
                "H2MG_BACKEND=numba but the numba package is not importable"
            )
        BACKEND = "numpy"


def jit(func):
    """Compile ``func`` with numba when the numba backend is active.

    Under the NumPy backend this is the identity decorator, so the
    undecorated Python/NumPy implementation runs as-is.
    """
    if BACKEND == "numba":
        return _njit(cache=True)(func)
    return func
