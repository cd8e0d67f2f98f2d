"""Hot-loop kernels: convolution patch gather/scatter and bilinear resize.

The compiled Cython backend is used when it was built; otherwise the numpy
backend is loaded. Set ``BEVX_KERNELS=python`` to force the numpy backend.
"""

import os

from bevx._kernels import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("BEVX_KERNELS", "").lower() != "python":
    try:
        from bevx._kernels import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
resize_bilinear = _impl.resize_bilinear
resize_bilinear_backward = _impl.resize_bilinear_backward
conv_out_size = _pykernels.conv_out_size


def backend_module(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from bevx._kernels import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
