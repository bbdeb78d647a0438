"""Backend selection for the convolution hot kernels.

Two interchangeable implementations exist: patch-matrix lowering through
BLAS (``numpy_backend``, the default) and numba ``@njit`` direct loops
(``numba_backend``).  ``DYNACONV_BACKEND=numba`` or ``=numpy`` forces a
path; the default follows the measured benchmark for this artifact
(``benchmarks/bench_kernels.py``): BLAS wins the channel-heavy stage
convolutions, the JIT loops win depthwise and scatter shapes.  Both agree
within float rounding.
"""

import os

from . import numpy_backend

_requested = os.environ.get("DYNACONV_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"DYNACONV_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    from . import numba_backend as _impl
    BACKEND = "numba"
else:
    _impl = numpy_backend
    BACKEND = "numpy"

conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd_w = _impl.conv2d_bwd_w
tconv2d_fwd = _impl.tconv2d_fwd
tconv2d_bwd_w = _impl.tconv2d_bwd_w


def set_threads(n: int):
    """Cap worker threads for the JIT backend (BLAS reads its own env)."""
    if BACKEND == "numba":
        import numba
        numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
