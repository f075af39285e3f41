"""Vectorized numpy implementations of the conv/pool kernels.

Used when the compiled extension is unavailable or explicitly disabled.
Convolution goes through im2col and one matrix product per call; pooling
uses a strided window view. Shapes follow the single-image convention:
inputs are (C, H, W), kernels are (C_out, C_in, kh, kw).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_hw(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _im2col(xp, kh, kw, stride):
    # xp: padded input (C, Hp, Wp) -> (C*kh*kw, oh*ow)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, oh, ow = win.shape[:3]
    return win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, oh * ow), oh, ow


def conv2d_forward(x, w, b, stride, pad):
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, oh, ow = _im2col(xp, w.shape[2], w.shape[3], stride)
    y = w.reshape(cout, -1) @ cols + b[:, None]
    return np.ascontiguousarray(y.reshape(cout, oh, ow))


def conv2d_backward(x, w, gy, stride, pad, need_input_grad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    gmat = gy.reshape(cout, -1)
    gw = (gmat @ cols.T).reshape(w.shape)
    gb = gmat.sum(axis=1)
    gx = None
    if need_input_grad:
        gcols = w.reshape(cout, -1).T @ gmat
        g6 = gcols.reshape(cin, kh, kw, oh, ow)
        gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for ky in range(kh):
            for kx in range(kw):
                gxp[:, ky : ky + oh * stride : stride, kx : kx + ow * stride : stride] += g6[:, ky, kx]
        gx = np.ascontiguousarray(gxp[:, pad : pad + h, pad : pad + wd])
    return gx, np.ascontiguousarray(gw), np.ascontiguousarray(gb)


def maxpool2d_forward(x, k, stride):
    c, h, w = x.shape
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    oh, ow = win.shape[1], win.shape[2]
    flat = win.reshape(c, oh, ow, k * k)
    # argmax over the flattened window picks the first maximum in
    # row-major window order, matching the compiled kernel's tie rule
    arg = flat.argmax(axis=3)
    y = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
    oy = (np.arange(oh) * stride)[None, :, None]
    ox = (np.arange(ow) * stride)[None, None, :]
    iy = oy + arg // k
    ix = ox + arg % k
    switches = (iy * w + ix).astype(np.int64)
    return np.ascontiguousarray(y), np.ascontiguousarray(switches)


def maxpool2d_backward(switches, gy, h, w):
    c = gy.shape[0]
    gx = np.zeros((c, h * w), dtype=gy.dtype)
    rows = np.repeat(np.arange(c), switches[0].size)
    np.add.at(gx, (rows, switches.reshape(-1)), gy.reshape(-1))
    return gx.reshape(c, h, w)
