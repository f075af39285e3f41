"""Hot numeric kernels with a compiled core and a numpy fallback.

The convolution and pooling loops dominate training time. A Cython
extension (``milnet.kernels._native``) implements them as straight C loops;
``milnet.kernels.numpy_backend`` mirrors the exact semantics with im2col
matrix products. The backend is picked once at import:

* ``MILNET_KERNELS=native`` forces the extension (ImportError if missing),
* ``MILNET_KERNELS=numpy`` forces the fallback,
* unset or ``auto`` prefers the extension when it is built.

Both backends implement the same four functions and the same deterministic
tie rule for pooling (first maximal element in row-major window order), so
swapping backends changes speed, not results beyond float summation order.
"""

import os

from milnet.kernels import numpy_backend

_choice = os.environ.get("MILNET_KERNELS", "auto").lower()

if _choice not in ("auto", "native", "numpy"):
    raise ValueError(f"MILNET_KERNELS must be auto, native or numpy; got {_choice!r}")

if _choice == "numpy":
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from milnet.kernels import _native as _impl
        BACKEND = "native"
    except ImportError:
        if _choice == "native":
            raise
        _impl = numpy_backend
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2d_forward = _impl.maxpool2d_forward
maxpool2d_backward = _impl.maxpool2d_backward

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "numpy_backend",
]
