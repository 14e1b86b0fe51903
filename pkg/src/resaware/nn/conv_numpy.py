"""Pure-numpy 3x3 convolution kernels (im2col + BLAS matmul).

Fallback path used when the compiled extension is unavailable; see
backend.py for selection and benchmarks/bench_conv.py for a comparison.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def _im2col(xp_n: np.ndarray, h: int, w: int) -> np.ndarray:
    # xp_n: one padded sample [Ci, H+2, W+2] -> [Ci*9, H*W]
    ci = xp_n.shape[0]
    cols = sliding_window_view(xp_n, (3, 3), axis=(1, 2))  # [Ci,H,W,3,3]
    return cols.transpose(0, 3, 4, 1, 2).reshape(ci * 9, h * w)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, ci, h, wd = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w2 = w.reshape(co, ci * 9)
    out = np.empty((n, co, h, wd))
    for i in range(n):  # per sample keeps the im2col buffer small
        out[i] = (w2 @ _im2col(xp[i], h, wd)).reshape(co, h, wd)
    out += b[None, :, None, None]
    return out


def conv2d_backward(x, w, gy, need_gx=True):
    n, ci, h, wd = x.shape
    co = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    gb = gy.sum(axis=(0, 2, 3))
    gw2 = np.zeros((co, ci * 9))
    for i in range(n):
        gw2 += gy[i].reshape(co, h * wd) @ _im2col(xp[i], h, wd).T
    gw = gw2.reshape(co, ci, 3, 3)
    gx = None
    if need_gx:
        # Input gradient is a convolution of gy with the flipped, transposed kernel.
        wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gx = conv2d_forward(gy, wt, np.zeros(ci))
    return gx, gw, gb
