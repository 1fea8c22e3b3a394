"""Pure-numpy convolution kernels.

Same call signatures as the compiled ``_kernels`` module; used when the
extension is not built or ``SLWSR_BACKEND=python`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"
_FLOATS = (np.float32, np.float64)


def _check(arr):
    if arr.dtype not in _FLOATS:
        raise TypeError(f"unsupported dtype {arr.dtype}")


def out_size(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    """Unfold (N, C, H, W) into columns of shape (C*k*k, N*Ho*Wo)."""
    _check(x)
    n, c, h, w = x.shape
    ho, wo = out_size(h, w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, k, k) -> (C, k, k, N, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, shape, k, stride, pad):
    """Adjoint of :func:`im2col`; overlapping taps are summed."""
    _check(cols)
    n, c, h, w = shape
    ho, wo = out_size(h, w, k, stride, pad)
    cols = cols.reshape(c, k, k, n, ho, wo)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dx)


def depthwise_forward(x, w, b):
    """Per-channel 3x3 cross-correlation, zero padding 1. ``w`` is (C, 3, 3)."""
    _check(x)
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty_like(x)
    out[...] = b.reshape(1, c, 1, 1)
    for i in range(3):
        for j in range(3):
            out += w[:, i, j].reshape(1, c, 1, 1) * xp[:, :, i:i + h, j:j + wd]
    return out


def depthwise_backward(x, w, gout):
    _check(x)
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(3):
        for j in range(3):
            dw[:, i, j] = np.einsum("nchw,nchw->c", gout, xp[:, :, i:i + h, j:j + wd])
            dxp[:, :, i:i + h, j:j + wd] += w[:, i, j].reshape(1, c, 1, 1) * gout
    db = gout.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1]), dw, db
