# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col/col2im packing for the 3x3 convolution hot path.

The matrix multiplies themselves go through BLAS (np.dot); this module
replaces the strided-copy packing that dominates the non-BLAS time in the
pure-numpy fallback.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "cython"


cdef void _pack_im2col(const double[:, :, ::1] xpad, double[:, ::1] cols,
                       Py_ssize_t h, Py_ssize_t w) noexcept nogil:
    cdef Py_ssize_t ci = xpad.shape[0]
    cdef Py_ssize_t c, dy, dx, row, i, j
    for c in range(ci):
        for dy in range(3):
            for dx in range(3):
                row = (c * 3 + dy) * 3 + dx
                for i in range(h):
                    for j in range(w):
                        cols[row, i * w + j] = xpad[c, i + dy, j + dx]


def conv2d_forward(cnp.ndarray x, cnp.ndarray w, cnp.ndarray b):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], i
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cdef double[:, :, :, ::1] xpv = xp
    cols = np.empty((ci * 9, h * wd))
    cdef double[:, ::1] colsv = cols
    w2 = np.ascontiguousarray(w.reshape(co, ci * 9))
    out = np.empty((n, co, h, wd))
    for i in range(n):
        _pack_im2col(xpv[i], colsv, h, wd)
        np.dot(w2, cols, out=out[i].reshape(co, h * wd))
    out += b[None, :, None, None]
    return out


def conv2d_backward(cnp.ndarray x, cnp.ndarray w, cnp.ndarray gy, bint need_gx=True):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], i
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cdef double[:, :, :, ::1] xpv = xp
    cols = np.empty((ci * 9, h * wd))
    cdef double[:, ::1] colsv = cols
    gb = gy.sum(axis=(0, 2, 3))
    gw2 = np.zeros((co, ci * 9))
    for i in range(n):
        _pack_im2col(xpv[i], colsv, h, wd)
        gw2 += np.dot(np.ascontiguousarray(gy[i].reshape(co, h * wd)), cols.T)
    gw = gw2.reshape(co, ci, 3, 3)
    gx = None
    if need_gx:
        wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        gx = conv2d_forward(np.ascontiguousarray(gy), wt, np.zeros(ci))
    return gx, gw, gb
