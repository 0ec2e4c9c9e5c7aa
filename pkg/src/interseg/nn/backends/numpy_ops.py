"""Pure-numpy kernel fallback: im2col views + BLAS tensordot."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x):
    # (N,Ci,H,W) zero-padded by 1 -> view (N,Ci,H,W,3,3); no data copied
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(2, 3))


def conv3x3(x, w):
    win = _windows(x)
    # contract Ci and the 3x3 taps; tensordot lowers to a single GEMM
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2))


def conv3x3_dw(x, dy):
    win = _windows(x)
    return np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))


def maxpool2(x):
    n, c, h, w = x.shape
    hh, ww = h // 2, w // 2
    win = x.reshape(n, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh, ww, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_bwd(dy, idx):
    n, c, hh, ww = dy.shape
    flat = np.zeros((n, c, hh, ww, 4), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None].astype(np.int64), dy[..., None], axis=-1)
    dx = flat.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, hh * 2, ww * 2))
