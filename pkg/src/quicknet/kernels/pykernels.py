"""Numpy implementations of the hot kernels (2-D convolution and pooling).

The convolution routes through im2col so the inner product runs in BLAS;
pooling uses window reshapes. The compiled extension in ckernels.pyx
implements the same contracts with direct loops; either backend may be
active (see quicknet.kernels).

Layout conventions: activations are (N, C, H, W); kernels are
(C_out, C_in, k_h, k_w). Pooling windows are non-overlapping (stride equals
the window) and extents must divide exactly -- callers validate that.
"""

import numpy as np

BACKEND_NAME = "python"


def _out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    """Window view (N, Ho, Wo, C*kh*kw) of the padded input, as a matrix."""
    n, c, h, w = x.shape
    ho = _out_extent(h, kh, stride, pad)
    wo = _out_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    )
    # (N*Ho*Wo, C*kh*kw), contiguous copy so the GEMM below is fast
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw), ho, wo


def conv2d_forward(x, w, bias, stride, pad):
    n = x.shape[0]
    cout, cin, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    y = cols @ w.reshape(cout, cin * kh * kw).T
    y += bias
    return np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, dy, stride, pad):
    """Gradients (dx, dw, db) of the cross-correlation forward pass."""
    n, cin, h, wdt = x.shape
    cout, _, kh, kw = w.shape
    _, _, ho, wo = dy.shape

    dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
    cols, _, _ = _im2col(x, kh, kw, stride, pad)
    dw = (dy_mat.T @ cols).reshape(cout, cin, kh, kw)
    db = dy.sum(axis=(0, 2, 3))

    # Scatter dcols back onto the padded input (col2im).
    dcols = dy_mat @ w.reshape(cout, cin * kh * kw)
    dcols = dcols.reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((n, cin, h + 2 * pad, wdt + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * ho
        for j in range(kw):
            j_max = j + stride * wo
            dxp[:, :, i:i_max:stride, j:j_max:stride] += dcols[:, :, i, j, :, :]
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + wdt], dw, db
    return dxp, dw, db


def _windows(x, kh, kw):
    n, c, h, w = x.shape
    ho, wo = h // kh, w // kw
    return x.reshape(n, c, ho, kh, wo, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, kh * kw)


def maxpool_forward(x, kh, kw):
    """Window max plus flat argmax per window (first maximum on ties)."""
    win = _windows(x, kh, kw)
    arg = win.argmax(axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool_backward(dy, arg, kh, kw):
    n, c, ho, wo = dy.shape
    dwin = np.zeros((n, c, ho, wo, kh * kw), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kh, wo * kw)
    return np.ascontiguousarray(dx)


def avgpool_forward(x, kh, kw):
    return np.ascontiguousarray(_windows(x, kh, kw).mean(axis=-1))


def avgpool_backward(dy, kh, kw):
    n, c, ho, wo = dy.shape
    dwin = np.broadcast_to(dy[..., None] / (kh * kw), (n, c, ho, wo, kh * kw))
    dx = dwin.reshape(n, c, ho, wo, kh, kw).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * kh, wo * kw)
    return np.ascontiguousarray(dx)
