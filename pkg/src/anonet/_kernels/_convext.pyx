# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im kernels for same-padding 2-D convolution.

Layout contract (shared with the numpy fallback in ``_convpy``):

* ``im2col`` maps a single image (C, H, W) to a patch matrix of shape
  (C*k*k, oh*ow) where row index = c*k*k + i*k + j and column index
  = oy*ow + ox.  Out-of-bounds taps read zero.
* ``col2im`` is the adjoint scatter-add, returning (C, H, W).

Both operate in float64 and accept an optional preallocated output buffer
so hot loops avoid reallocating large arrays.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(cnp.float64_t[:, :, ::1] img, int k, int stride, int pad, out=None):
    cdef Py_ssize_t C = img.shape[0]
    cdef Py_ssize_t H = img.shape[1]
    cdef Py_ssize_t W = img.shape[2]
    cdef Py_ssize_t oh = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (W + 2 * pad - k) // stride + 1
    if out is None:
        out = np.empty((C * k * k, oh * ow), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] dst = out
    cdef Py_ssize_t c, i, j, oy, ox, y, x, row, base
    for c in range(C):
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                for oy in range(oh):
                    y = oy * stride + i - pad
                    base = oy * ow
                    if y < 0 or y >= H:
                        for ox in range(ow):
                            dst[row, base + ox] = 0.0
                        continue
                    for ox in range(ow):
                        x = ox * stride + j - pad
                        if x < 0 or x >= W:
                            dst[row, base + ox] = 0.0
                        else:
                            dst[row, base + ox] = img[c, y, x]
    return out


def col2im(cnp.float64_t[:, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
           int k, int stride, int pad):
    cdef Py_ssize_t oh = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (W + 2 * pad - k) // stride + 1
    img_arr = np.zeros((C, H, W), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] img = img_arr
    cdef Py_ssize_t c, i, j, oy, ox, y, x, row
    for c in range(C):
        for i in range(k):
            for j in range(k):
                row = (c * k + i) * k + j
                for oy in range(oh):
                    y = oy * stride + i - pad
                    if y < 0 or y >= H:
                        continue
                    for ox in range(ow):
                        x = ox * stride + j - pad
                        if x < 0 or x >= W:
                            continue
                        img[c, y, x] += cols[row, oy * ow + ox]
    return img_arr
