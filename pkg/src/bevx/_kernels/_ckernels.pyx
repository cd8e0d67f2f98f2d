# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. Same contracts as _pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    out_arr = np.zeros((n, ho, wo, kh * kw * c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, dy, dx, ch, iy, ix, base
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for dy in range(kh):
                        iy = oy * stride + dy - pad
                        if iy < 0 or iy >= h:
                            continue
                        for dx in range(kw):
                            ix = ox * stride + dx - pad
                            if ix < 0 or ix >= w:
                                continue
                            base = (dy * kw + dx) * c
                            for ch in range(c):
                                out[b, oy, ox, base + ch] = x[b, iy, ix, ch]
    return out_arr


def col2im(const double[:, :, :, ::1] cols, x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], h = x_shape[1], w = x_shape[2], c = x_shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, oy, ox, dy, dx, ch, iy, ix, base
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for dy in range(kh):
                        iy = oy * stride + dy - pad
                        if iy < 0 or iy >= h:
                            continue
                        for dx in range(kw):
                            ix = ox * stride + dx - pad
                            if ix < 0 or ix >= w:
                                continue
                            base = (dy * kw + dx) * c
                            for ch in range(c):
                                out[b, iy, ix, ch] += cols[b, oy, ox, base + ch]
    return out_arr


cdef void _taps(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] lo,
                Py_ssize_t[::1] hi, double[::1] frac) noexcept nogil:
    cdef double scale = <double>n_in / <double>n_out
    cdef double src
    cdef Py_ssize_t i
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        lo[i] = <Py_ssize_t>floor(src)
        if lo[i] > n_in - 1:
            lo[i] = n_in - 1
        hi[i] = lo[i] + 1 if lo[i] + 1 < n_in else n_in - 1
        frac[i] = src - lo[i]


def resize_bilinear(const double[:, :, :, ::1] x, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    out_arr = np.empty((n, ho, wo, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t[::1] ylo = np.empty(ho, dtype=np.intp), yhi = np.empty(ho, dtype=np.intp)
    cdef Py_ssize_t[::1] xlo = np.empty(wo, dtype=np.intp), xhi = np.empty(wo, dtype=np.intp)
    cdef double[::1] yf = np.empty(ho), xf = np.empty(wo)
    cdef Py_ssize_t b, oy, ox, ch
    cdef double wy, wx
    with nogil:
        _taps(h, ho, ylo, yhi, yf)
        _taps(w, wo, xlo, xhi, xf)
        for b in range(n):
            for oy in range(ho):
                wy = yf[oy]
                for ox in range(wo):
                    wx = xf[ox]
                    for ch in range(c):
                        out[b, oy, ox, ch] = (
                            (1.0 - wy) * ((1.0 - wx) * x[b, ylo[oy], xlo[ox], ch]
                                          + wx * x[b, ylo[oy], xhi[ox], ch])
                            + wy * ((1.0 - wx) * x[b, yhi[oy], xlo[ox], ch]
                                    + wx * x[b, yhi[oy], xhi[ox], ch]))
    return out_arr


def resize_bilinear_backward(const double[:, :, :, ::1] gy, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = gy.shape[0], ho = gy.shape[1], wo = gy.shape[2], c = gy.shape[3]
    out_arr = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t[::1] ylo = np.empty(ho, dtype=np.intp), yhi = np.empty(ho, dtype=np.intp)
    cdef Py_ssize_t[::1] xlo = np.empty(wo, dtype=np.intp), xhi = np.empty(wo, dtype=np.intp)
    cdef double[::1] yf = np.empty(ho), xf = np.empty(wo)
    cdef Py_ssize_t b, oy, ox, ch
    cdef double wy, wx, g
    with nogil:
        _taps(h, ho, ylo, yhi, yf)
        _taps(w, wo, xlo, xhi, xf)
        for b in range(n):
            for oy in range(ho):
                wy = yf[oy]
                for ox in range(wo):
                    wx = xf[ox]
                    for ch in range(c):
                        g = gy[b, oy, ox, ch]
                        out[b, ylo[oy], xlo[ox], ch] += (1.0 - wy) * (1.0 - wx) * g
                        out[b, ylo[oy], xhi[ox], ch] += (1.0 - wy) * wx * g
                        out[b, yhi[oy], xlo[ox], ch] += wy * (1.0 - wx) * g
                        out[b, yhi[oy], xhi[ox], ch] += wy * wx * g
    return out_arr
