"""Backend selection for the convolution kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``RTIMPLANT_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("RTIMPLANT_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"


def im2col(x: np.ndarray, kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    if _ckernels is not None and x.dtype in (np.float32, np.float64):
        return _ckernels.im2col(np.ascontiguousarray(x), kh, kw, stride, pad)
    return _pykernels.im2col(x, kh, kw, stride, pad)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int],
           kh: int, kw: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    n, c, h, w = shape
    if _ckernels is not None and cols.dtype in (np.float32, np.float64):
        return _ckernels.col2im(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad)
    return _pykernels.col2im(cols, n, c, h, w, kh, kw, stride, pad)
