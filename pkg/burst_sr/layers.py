"""Network primitives with hand-written backward passes.

Activations are (N, H, W, C) float64 arrays; conv weights are
(k, k, C_in, C_out) with zero padding k // 2.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d(x, weight, bias, stride=1):
    """2-D convolution (cross-correlation) via im2col. Returns ``(y, cache)``."""
    n, h, w, c_in = x.shape
    k = weight.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    h_out, w_out = windows.shape[1:3]
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h_out * w_out, k * k * c_in)
    y = cols @ weight.reshape(k * k * c_in, -1) + bias
    return y.reshape(n, h_out, w_out, -1), (x.shape, cols, stride)


def conv2d_backward(grad, cache, weight):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv2d`."""
    x_shape, cols, stride = cache
    n, h, w, c_in = x_shape
    k = weight.shape[0]
    pad = k // 2
    _, h_out, w_out, c_out = grad.shape
    g = grad.reshape(-1, c_out)
    d_weight = (cols.T @ g).reshape(weight.shape)
    d_bias = g.sum(axis=0)
    d_cols = (g @ weight.reshape(k * k * c_in, c_out).T).reshape(n, h_out, w_out, k, k, c_in)

    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c_in))
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + stride * (h_out - 1) + 1:stride, j:j + stride * (w_out - 1) + 1:stride, :] += \
                d_cols[:, :, :, i, j, :]
    return dxp[:, pad:pad + h, pad:pad + w, :], d_weight, d_bias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, pre):
    return grad * (pre > 0)


def resize_matrix(n_out, n_in):
    """Bilinear (half-pixel centred, edge-clamped) resampling matrix (n_out × n_in)."""
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    matrix = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(matrix, (rows, i0), 1.0 - frac)
    np.add.at(matrix, (rows, i1), frac)
    return matrix


def upsample(x, size):
    """Bilinear resize of (N, h, w, C) to (N, H, W, C). Returns ``(y, cache)``."""
    my = resize_matrix(size[0], x.shape[1])
    mx = resize_matrix(size[1], x.shape[2])
    return np.einsum('Hh,nhwc,Ww->nHWc', my, x, mx), (my, mx)


def upsample_backward(grad, cache):
    my, mx = cache
    return np.einsum('Hh,nHWc,Ww->nhwc', my, grad, mx)
