"""Backend selection for the hot numeric kernels.

Two interchangeable implementations exist:

* ``numpy_impl`` -- vectorized numpy (BLAS matmuls), always available.
* ``numba_impl`` -- @njit fused loops, faster on the small per-row
  softmax/normalization work that dominates desk-scale training.

The active backend is chosen once at import time from the environment
variable ``CROSSGLG_BACKEND``:

* ``numba``  -- require numba, fail loudly if it cannot be imported
* ``numpy``  -- force the pure-numpy path
* unset      -- numba if importable, else numpy

``benchmarks/bench_kernels.py`` times the two backends side by side.
"""
from __future__ import annotations

import os

from . import numpy_impl

_requested = os.environ.get("CROSSGLG_BACKEND", "").strip().lower()

if _requested not in ("", "numpy", "numba"):
    raise RuntimeError(
        f"CROSSGLG_BACKEND={_requested!r} not understood (use 'numpy' or 'numba')"
    )

if _requested == "numpy":
    _impl = numpy_impl
    BACKEND = "numpy"
else:
    try:
        from . import numba_impl as _numba_impl

        _impl = _numba_impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_impl
        BACKEND = "numpy"


def backend_name() -> str:
    """Name of the active kernel backend ('numpy' or 'numba')."""
    return BACKEND


def _c64(a):
    """Kernels assume C-contiguous float64 input."""
    import numpy as np

    return np.ascontiguousarray(a, dtype=np.float64)


def sdpa_forward(q, k, v, scale):
    return _impl.sdpa_forward(_c64(q), _c64(k), _c64(v), float(scale))


def sdpa_backward(q, k, v, probs, d_out, scale):
    return _impl.sdpa_backward(
        _c64(q), _c64(k), _c64(v), _c64(probs), _c64(d_out), float(scale)
    )


def layernorm_forward(x, gain, bias, eps=1e-5):
    return _impl.layernorm_forward(_c64(x), _c64(gain), _c64(bias), float(eps))


def layernorm_backward(d_y, x, gain, mean, rstd):
    return _impl.layernorm_backward(
        _c64(d_y), _c64(x), _c64(gain), _c64(mean), _c64(rstd)
    )


def softmax_rows(x):
    return _impl.softmax_rows(_c64(x))
