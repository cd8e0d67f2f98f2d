"""Numpy implementations of the hot kernels (fallback backend)."""

import numpy as np


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """[N,H,W,C] -> [N,Ho,Wo,kh*kw*C], patch layout (dy, dx, c)."""
    n, h, w, c = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=np.float64)
    for dy in range(kh):
        ys = slice(dy, dy + stride * (ho - 1) + 1, stride)
        for dx in range(kw):
            xs = slice(dx, dx + stride * (wo - 1) + 1, stride)
            cols[:, :, :, dy, dx, :] = x[:, ys, xs, :]
    return cols.reshape(n, ho, wo, kh * kw * c)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of im2col: scatter-add patches back into an [N,H,W,C] map."""
    n, h, w, c = x_shape
    _, ho, wo, _ = cols.shape
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    for dy in range(kh):
        ys = slice(dy, dy + stride * (ho - 1) + 1, stride)
        for dx in range(kw):
            xs = slice(dx, dx + stride * (wo - 1) + 1, stride)
            out[:, ys, xs, :] += cols[:, :, :, dy, dx, :]
    if pad:
        out = out[:, pad:pad + h, pad:pad + w, :]
    return np.ascontiguousarray(out)


def interp_taps(n_in, n_out):
    """Half-pixel bilinear taps: (lo index, hi index, hi weight) per output."""
    scale = n_in / n_out
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    src = np.maximum(src, 0.0)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def interp_matrix(n_in, n_out):
    lo, hi, frac = interp_taps(n_in, n_out)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(x, ho, wo):
    _, h, w, _ = x.shape
    ry = interp_matrix(h, ho)
    rx = interp_matrix(w, wo)
    t = np.einsum("oh,nhwc->nowc", ry, x, optimize=True)
    return np.ascontiguousarray(np.einsum("pw,nowc->nopc", rx, t, optimize=True))


def resize_bilinear_backward(gy, h, w):
    _, ho, wo, _ = gy.shape
    ry = interp_matrix(h, ho)
    rx = interp_matrix(w, wo)
    t = np.einsum("pw,nopc->nowc", rx, gy, optimize=True)
    return np.ascontiguousarray(np.einsum("oh,nowc->nhwc", ry, t, optimize=True))
