"""Backend dispatch for the loop-heavy kernels.

Set VECMAP_KERNELS=numpy or VECMAP_KERNELS=numba to force a backend;
the default ("auto") uses numba when it imports cleanly and falls back to
the pure-numpy implementations otherwise.  Matrix products and
convolutions are NOT here on purpose: those ride BLAS in every backend,
where hand-written loops would only slow them down.
"""
from __future__ import annotations

import os

_choice = os.environ.get("VECMAP_KERNELS", "auto").strip().lower()

if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"VECMAP_KERNELS must be auto|numba|numpy, got {_choice!r}")

if _choice == "numpy":
    from . import numpy_impl as _impl

    BACKEND = "numpy"
elif _choice == "numba":
    from . import numba_impl as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl

        BACKEND = "numpy"

bilinear_forward = _impl.bilinear_forward
bilinear_backward = _impl.bilinear_backward
rasterize_soft = _impl.rasterize_soft
rasterize_mask = _impl.rasterize_mask
dp_match = _impl.dp_match

__all__ = [
    "BACKEND",
    "bilinear_forward",
    "bilinear_backward",
    "rasterize_soft",
    "rasterize_mask",
    "dp_match",
]
