"""Pure-numpy im2col / col2im, used when the compiled extension is absent.

Same layout contract as ``_convext``: patch-matrix rows are ordered
(c, i, j) and columns (oy, ox); out-of-bounds taps are zero.
"""

import numpy as np


def im2col(img, k, stride, pad, out=None):
    C, H, W = img.shape
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]                      # (C, oh, ow, k, k)
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(C * k * k, oh * ow)
    if out is None:
        return np.ascontiguousarray(cols)
    out[...] = cols
    return out


def col2im(cols, C, H, W, k, stride, pad):
    oh = (H + 2 * pad - k) // stride + 1
    ow = (W + 2 * pad - k) // stride + 1
    patches = cols.reshape(C, k, k, oh, ow)
    padded = np.zeros((C, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            padded[:, i:i + oh * stride:stride, j:j + ow * stride:stride] += patches[:, i, j]
    return padded[:, pad:pad + H, pad:pad + W]
