"""Layer primitives with explicit forward/backward passes.

All activations are ``(N, C, H, W)`` arrays.  Forward functions return the
output plus whatever the matching backward function needs; caches are plain
tuples so that concurrent evaluation-mode forwards never share state.
"""
from __future__ import annotations

import numpy as np

from . import backends


def conv3x3_forward(x, w, b=None):
    y = backends.conv3x3(x, w)
    if b is not None:
        y += b[None, :, None, None]
    return y, (x, w)


def conv3x3_backward(dy, cache, with_bias=False):
    x, w = cache
    # input gradient is a correlation with the spatially flipped, channel-
    # transposed kernel; reuses the forward kernel
    w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx = backends.conv3x3(dy, w_flip)
    dw = backends.conv3x3_dw(x, dy)
    db = dy.sum(axis=(0, 2, 3)) if with_bias else None
    return dx, dw, db


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, (x > 0)


def relu_backward(dy, mask):
    return dy * mask


def batchnorm_forward(x, gamma, beta, running_mean, running_var, *,
                      train, momentum=0.1, eps=1e-5):
    """Channel-wise batch normalization.

    In training mode the batch statistics are used and the running buffers
    are updated in place (biased variance, to match what normalization
    itself uses).  In eval mode the running buffers are constants.
    """
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        cache = (xhat, inv_std, gamma)
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
        cache = None  # eval-mode forwards are never backpropagated
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return y, cache


def batchnorm_backward(dy, cache):
    if cache is None:
        raise RuntimeError("backward through an eval-mode batchnorm forward")
    xhat, inv_std, gamma = cache
    dbeta = dy.sum(axis=(0, 2, 3))
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    scale = (gamma * inv_std)[None, :, None, None]
    dx = scale * (dy
                  - (dbeta / m)[None, :, None, None]
                  - xhat * (dgamma / m)[None, :, None, None])
    return dx, dgamma, dbeta


def dropout_forward(x, rate, *, train, rng):
    if not train or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def maxpool_forward(x):
    y, idx = backends.maxpool2(x)
    return y, idx


def maxpool_backward(dy, idx):
    return backends.maxpool2_bwd(dy, idx)


def tconv2x2_forward(x, w, b):
    """2x2 stride-2 transposed convolution (learned upsampling).

    Receptive fields do not overlap, so this is a per-pixel matmul followed
    by a spatial rearrangement; BLAS handles it without a dedicated kernel.
    """
    n, ci, h, wd = x.shape
    co = w.shape[1]
    xm = x.transpose(0, 2, 3, 1).reshape(-1, ci)
    ym = xm @ w.reshape(ci, co * 4)
    y = ym.reshape(n, h, wd, co, 2, 2).transpose(0, 3, 1, 4, 2, 5)
    y = np.ascontiguousarray(y).reshape(n, co, 2 * h, 2 * wd)
    y += b[None, :, None, None]
    return y, (xm, w, x.shape)


def tconv2x2_backward(dy, cache):
    xm, w, x_shape = cache
    n, ci, h, wd = x_shape
    co = w.shape[1]
    dym = dy.reshape(n, co, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, co * 4)
    dw = (xm.T @ dym).reshape(ci, co, 2, 2)
    db = dy.sum(axis=(0, 2, 3))
    dxm = dym @ w.reshape(ci, co * 4).T
    dx = dxm.reshape(n, h, wd, ci).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dw, db


def conv1x1_forward(x, w, b):
    n, f, h, wd = x.shape
    xm = x.transpose(0, 2, 3, 1).reshape(-1, f)
    ym = xm @ w.T + b
    y = ym.reshape(n, h, wd, -1).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (xm, w, x.shape)


def conv1x1_backward(dy, cache):
    xm, w, x_shape = cache
    n, f, h, wd = x_shape
    dym = dy.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
    dw = dym.T @ xm
    db = dym.sum(axis=0)
    dxm = dym @ w
    dx = dxm.reshape(n, h, wd, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dx), dw, db


def softmax(logits):
    """Numerically stable softmax over the channel axis."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean per-pixel cross-entropy and its gradient w.r.t. the logits.

    labels: (N, H, W) integer class ids.
    Returns (loss, probs, dlogits); dlogits already includes the 1/(N*H*W)
    mean factor.
    """
    n, c, h, w = logits.shape
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    ni, hi, wi = np.ogrid[:n, :h, :w]
    picked = log_probs[ni, labels, hi, wi]
    loss = float(-picked.mean())
    dlogits = probs.copy()
    dlogits[ni, labels, hi, wi] -= 1.0
    dlogits /= n * h * w
    return loss, probs, dlogits
