"""Convolution backend selection.

Prefers the compiled extension, falling back to the pure-numpy kernels.
Override with RESAWARE_BACKEND={auto,cython,python}.
"""

import os

_mode = os.environ.get("RESAWARE_BACKEND", "auto")
_impl = None

if _mode not in ("auto", "cython", "python"):
    raise ValueError(f"RESAWARE_BACKEND must be auto, cython or python, got {_mode!r}")

if _mode in ("auto", "cython"):
    try:
        from . import _convcore as _impl
    except ImportError:
        if _mode == "cython":
            raise
        _impl = None

if _impl is None:
    from . import conv_numpy as _impl

NAME = _impl.NAME
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
