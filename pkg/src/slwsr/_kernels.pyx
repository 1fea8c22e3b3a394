# cython: language_level=3
"""Compiled convolution kernels (float32 and float64 via fused types)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"

ctypedef fused real:
    float
    double


def out_size(Py_ssize_t h, Py_ssize_t w, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


cdef void _im2col(const real[:, :, :, ::1] x, real[:, ::1] cols,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col, ih, lo, hi, off
    cdef real* dst
    cdef const real* src
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                row = (ch * k + i) * k + j
                # output columns whose input column j + ow*stride - pad is inside [0, w)
                off = j - pad
                lo = 0
                while lo < wo and lo * stride + off < 0:
                    lo += 1
                hi = wo
                while hi > lo and (hi - 1) * stride + off >= w:
                    hi -= 1
                col = 0
                for b in range(n):
                    for oh in range(ho):
                        dst = &cols[row, col]
                        ih = oh * stride + i - pad
                        if ih < 0 or ih >= h:
                            for ow in range(wo):
                                dst[ow] = 0
                        else:
                            src = &x[b, ch, ih, 0]
                            for ow in range(lo):
                                dst[ow] = 0
                            if stride == 1:
                                for ow in range(lo, hi):
                                    dst[ow] = src[ow + off]
                            else:
                                for ow in range(lo, hi):
                                    dst[ow] = src[ow * stride + off]
                            for ow in range(hi, wo):
                                dst[ow] = 0
                        col += wo


def im2col(x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    """Unfold (N, C, H, W) into columns of shape (C*k*k, N*Ho*Wo)."""
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho, wo = out_size(h, w, k, stride, pad)
    cols = np.empty((c * k * k, n * ho * wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, k, stride, pad, ho, wo)
    elif x.dtype == np.float64:
        _im2col[double](x, cols, k, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return cols


cdef void _col2im(const real[:, ::1] cols, real[:, :, :, ::1] dx,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t b, ch, i, j, oh, ow, row, col, ih, lo, hi, off
    cdef real* dst
    cdef const real* src
    for ch in range(c):
        for i in range(k):
            for j in range(k):
                row = (ch * k + i) * k + j
                off = j - pad
                lo = 0
                while lo < wo and lo * stride + off < 0:
                    lo += 1
                hi = wo
                while hi > lo and (hi - 1) * stride + off >= w:
                    hi -= 1
                col = 0
                for b in range(n):
                    for oh in range(ho):
                        ih = oh * stride + i - pad
                        if ih >= 0 and ih < h:
                            src = &cols[row, col]
                            dst = &dx[b, ch, ih, 0]
                            if stride == 1:
                                for ow in range(lo, hi):
                                    dst[ow + off] += src[ow]
                            else:
                                for ow in range(lo, hi):
                                    dst[ow * stride + off] += src[ow]
                        col += wo


def col2im(cols, shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    """Adjoint of :func:`im2col`; overlapping taps are summed."""
    cols = np.ascontiguousarray(cols)
    n, c, h, w = shape
    ho, wo = out_size(h, w, k, stride, pad)
    dx = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, dx, k, stride, pad, ho, wo)
    elif cols.dtype == np.float64:
        _col2im[double](cols, dx, k, stride, pad, ho, wo)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return dx


cdef void _dw_fwd(const real[:, :, :, ::1] x, const real[:, :, ::1] wt,
                  const real[::1] bias, real[:, :, :, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, y, xx, i, j, iy, ix
    cdef real acc
    for b in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    acc = bias[ch]
                    for i in range(3):
                        iy = y + i - 1
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(3):
                            ix = xx + j - 1
                            if ix >= 0 and ix < w:
                                acc = acc + wt[ch, i, j] * x[b, ch, iy, ix]
                    out[b, ch, y, xx] = acc


def depthwise_forward(x, w, b):
    """Per-channel 3x3 cross-correlation, zero padding 1. ``w`` is (C, 3, 3)."""
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    b = np.ascontiguousarray(b, dtype=x.dtype)
    out = np.empty_like(x)
    if x.dtype == np.float32:
        _dw_fwd[float](x, w, b, out)
    elif x.dtype == np.float64:
        _dw_fwd[double](x, w, b, out)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return out


cdef void _dw_bwd(const real[:, :, :, ::1] x, const real[:, :, ::1] wt,
                  const real[:, :, :, ::1] g, real[:, :, :, ::1] dx,
                  real[:, :, ::1] dw, real[::1] db) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, ch, y, xx, i, j, iy, ix
    cdef real gv
    for b in range(n):
        for ch in range(c):
            for y in range(h):
                for xx in range(w):
                    gv = g[b, ch, y, xx]
                    db[ch] += gv
                    for i in range(3):
                        iy = y + i - 1
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(3):
                            ix = xx + j - 1
                            if ix >= 0 and ix < w:
                                dw[ch, i, j] += gv * x[b, ch, iy, ix]
                                dx[b, ch, iy, ix] += gv * wt[ch, i, j]


def depthwise_backward(x, w, gout):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    gout = np.ascontiguousarray(gout, dtype=x.dtype)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(x.shape[1], dtype=x.dtype)
    if x.dtype == np.float32:
        _dw_bwd[float](x, w, gout, dx, dw, db)
    elif x.dtype == np.float64:
        _dw_bwd[double](x, w, gout, dx, dw, db)
    else:
        raise TypeError(f"unsupported dtype {x.dtype}")
    return dx, dw, db
