# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled conv/pool kernels.

Straight C loops over typed memoryviews, specialized for float32 and
float64. Semantics mirror milnet.kernels.numpy_backend exactly, including
the pooling tie rule (first maximal element in row-major window order).
"""

import numpy as np

from libc.stdint cimport int64_t

ctypedef fused floating:
    float
    double


def conv2d_forward(floating[:, :, ::1] x, floating[:, :, :, ::1] w, floating[::1] b,
                   int stride, int pad):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    if floating is float:
        out_arr = np.zeros((cout, oh, ow), dtype=np.float32)
    else:
        out_arr = np.zeros((cout, oh, ow), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, ci, oy, ox, ky, kx, iy, ox_lo, ox_hi
    cdef floating wv, bv
    with nogil:
        for co in range(cout):
            for oy in range(oh):
                for ci in range(cin):
                    for ky in range(kh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for kx in range(kw):
                            wv = w[co, ci, ky, kx]
                            ox_lo = 0
                            if kx < pad:
                                ox_lo = (pad - kx + stride - 1) // stride
                            ox_hi = (wd - 1 - kx + pad) // stride + 1
                            if ox_hi > ow:
                                ox_hi = ow
                            for ox in range(ox_lo, ox_hi):
                                out[co, oy, ox] += wv * x[ci, iy, ox * stride + kx - pad]
        for co in range(cout):
            bv = b[co]
            for oy in range(oh):
                for ox in range(ow):
                    out[co, oy, ox] += bv
    return out_arr


def conv2d_backward(floating[:, :, ::1] x, floating[:, :, :, ::1] w, floating[:, :, ::1] gy,
                    int stride, int pad, bint need_input_grad):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[1], ow = gy.shape[2]
    if floating is float:
        dtype = np.float32
    else:
        dtype = np.float64
    gw_arr = np.zeros((cout, cin, kh, kw), dtype=dtype)
    gb_arr = np.zeros(cout, dtype=dtype)
    # a 1-element dummy keeps the memoryview bound when no input grad is needed
    gx_arr = np.zeros((cin, h, wd) if need_input_grad else (1, 1, 1), dtype=dtype)
    cdef floating[:, :, :, ::1] gw = gw_arr
    cdef floating[::1] gb = gb_arr
    cdef floating[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t co, ci, oy, ox, ky, kx, iy, ox_lo, ox_hi
    cdef floating g, acc, wv
    with nogil:
        for co in range(cout):
            acc = 0
            for oy in range(oh):
                for ox in range(ow):
                    acc += gy[co, oy, ox]
            gb[co] = acc
        for co in range(cout):
            for ci in range(cin):
                for ky in range(kh):
                    for kx in range(kw):
                        ox_lo = 0
                        if kx < pad:
                            ox_lo = (pad - kx + stride - 1) // stride
                        ox_hi = (wd - 1 - kx + pad) // stride + 1
                        if ox_hi > ow:
                            ox_hi = ow
                        acc = 0
                        for oy in range(oh):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ox_lo, ox_hi):
                                acc += gy[co, oy, ox] * x[ci, iy, ox * stride + kx - pad]
                        gw[co, ci, ky, kx] = acc
        if need_input_grad:
            for co in range(cout):
                for oy in range(oh):
                    for ci in range(cin):
                        for ky in range(kh):
                            iy = oy * stride + ky - pad
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                wv = w[co, ci, ky, kx]
                                ox_lo = 0
                                if kx < pad:
                                    ox_lo = (pad - kx + stride - 1) // stride
                                ox_hi = (wd - 1 - kx + pad) // stride + 1
                                if ox_hi > ow:
                                    ox_hi = ow
                                for ox in range(ox_lo, ox_hi):
                                    gx[ci, iy, ox * stride + kx - pad] += wv * gy[co, oy, ox]
    return gx_arr, gw_arr, gb_arr


def maxpool2d_forward(floating[:, :, ::1] x, int k, int stride):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    if floating is float:
        y_arr = np.empty((c, oh, ow), dtype=np.float32)
    else:
        y_arr = np.empty((c, oh, ow), dtype=np.float64)
    idx_arr = np.empty((c, oh, ow), dtype=np.int64)
    cdef floating[:, :, ::1] y = y_arr
    cdef int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ci, oy, ox, wy, wx, iy, ix
    cdef floating best, v
    cdef int64_t best_at
    with nogil:
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = x[ci, oy * stride, ox * stride]
                    best_at = (oy * stride) * w + ox * stride
                    for wy in range(k):
                        iy = oy * stride + wy
                        for wx in range(k):
                            ix = ox * stride + wx
                            v = x[ci, iy, ix]
                            if v > best:
                                best = v
                                best_at = iy * w + ix
                    y[ci, oy, ox] = best
                    idx[ci, oy, ox] = best_at
    return y_arr, idx_arr


def maxpool2d_backward(int64_t[:, :, ::1] switches, floating[:, :, ::1] gy, int h, int w):
    cdef Py_ssize_t c = gy.shape[0], oh = gy.shape[1], ow = gy.shape[2]
    if floating is float:
        gx_arr = np.zeros((c, h, w), dtype=np.float32)
    else:
        gx_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef floating[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t ci, oy, ox
    cdef int64_t flat
    with nogil:
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    flat = switches[ci, oy, ox]
                    gx[ci, flat // w, flat % w] += gy[ci, oy, ox]
    return gx_arr
