"""Numba-jitted kernels for the hot loops.

Each output element is accumulated by exactly one thread, so results are
deterministic for a fixed build regardless of thread scheduling.  Kernels
specialize lazily per dtype (float32 for training, float64 for the
finite-difference gradient checks).
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True, fastmath=True)
def conv3x3(x, w):
    n, ci, h, wd = x.shape
    co = w.shape[0]
    y = np.zeros((n, co, h, wd), dtype=x.dtype)
    for p in prange(n * co):
        im = p // co
        oc = p % co
        for ic in range(ci):
            for ky in range(3):
                r_lo = max(0, 1 - ky)
                r_hi = min(h, h + 1 - ky)
                for kx in range(3):
                    wv = w[oc, ic, ky, kx]
                    c_lo = max(0, 1 - kx)
                    c_hi = min(wd, wd + 1 - kx)
                    for r in range(r_lo, r_hi):
                        xr = r + ky - 1
                        xc = kx - 1
                        for c in range(c_lo, c_hi):
                            y[im, oc, r, c] += wv * x[im, ic, xr, c + xc]
    return y


@njit(cache=True, parallel=True, fastmath=True)
def conv3x3_dw(x, dy):
    n, ci, h, wd = x.shape
    co = dy.shape[1]
    dw = np.zeros((co, ci, 3, 3), dtype=x.dtype)
    for p in prange(co * ci):
        oc = p // ci
        ic = p % ci
        for ky in range(3):
            r_lo = max(0, 1 - ky)
            r_hi = min(h, h + 1 - ky)
            for kx in range(3):
                c_lo = max(0, 1 - kx)
                c_hi = min(wd, wd + 1 - kx)
                acc = dw[oc, ic, ky, kx]  # zero of the right dtype
                for im in range(n):
                    for r in range(r_lo, r_hi):
                        xr = r + ky - 1
                        xc = kx - 1
                        for c in range(c_lo, c_hi):
                            acc += dy[im, oc, r, c] * x[im, ic, xr, c + xc]
                dw[oc, ic, ky, kx] = acc
    return dw


@njit(cache=True, parallel=True)
def maxpool2(x):
    n, c, h, w = x.shape
    hh = h // 2
    ww = w // 2
    y = np.empty((n, c, hh, ww), dtype=x.dtype)
    idx = np.empty((n, c, hh, ww), dtype=np.uint8)
    for p in prange(n * c):
        im = p // c
        ch = p % c
        for r in range(hh):
            for q in range(ww):
                best = x[im, ch, 2 * r, 2 * q]
                bi = np.uint8(0)
                for a in range(2):
                    for b in range(2):
                        v = x[im, ch, 2 * r + a, 2 * q + b]
                        if v > best:
                            best = v
                            bi = np.uint8(2 * a + b)
                y[im, ch, r, q] = best
                idx[im, ch, r, q] = bi
    return y, idx


@njit(cache=True, parallel=True)
def maxpool2_bwd(dy, idx):
    n, c, hh, ww = dy.shape
    dx = np.zeros((n, c, hh * 2, ww * 2), dtype=dy.dtype)
    for p in prange(n * c):
        im = p // c
        ch = p % c
        for r in range(hh):
            for q in range(ww):
                k = idx[im, ch, r, q]
                dx[im, ch, 2 * r + k // 2, 2 * q + k % 2] = dy[im, ch, r, q]
    return dx
