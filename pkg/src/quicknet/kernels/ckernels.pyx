# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: direct-loop 2-D convolution and pooling.

Same contracts as pykernels; selected at import by quicknet.kernels when the
extension built. Supports float32 and float64 via fused types.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double

BACKEND_NAME = "c"


def conv2d_forward(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w, const real[::1] bias,
                   int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((n, cout, ho, wo), dtype=dtype)
    cdef real[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t b, o, c, i, j, p, q, ih, iw
    cdef real acc
    with nogil:
        for b in range(n):
            for o in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        acc = bias[o]
                        for c in range(cin):
                            for p in range(kh):
                                ih = i * stride + p - pad
                                if ih < 0 or ih >= h:
                                    continue
                                for q in range(kw):
                                    iw = j * stride + q - pad
                                    if iw < 0 or iw >= wd:
                                        continue
                                    acc += x[b, c, ih, iw] * w[o, c, p, q]
                        y[b, o, i, j] = acc
    return y_arr


def conv2d_backward(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w,
                    const real[:, :, :, ::1] dy, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], cin = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.zeros((n, cin, h, wd), dtype=dtype)
    dw_arr = np.zeros((cout, cin, kh, kw), dtype=dtype)
    db_arr = np.zeros(cout, dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr
    cdef real[:, :, :, ::1] dw = dw_arr
    cdef real[::1] db = db_arr

    cdef Py_ssize_t b, o, c, i, j, p, q, ih, iw
    cdef real g
    with nogil:
        for b in range(n):
            for o in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        g = dy[b, o, i, j]
                        db[o] += g
                        for c in range(cin):
                            for p in range(kh):
                                ih = i * stride + p - pad
                                if ih < 0 or ih >= h:
                                    continue
                                for q in range(kw):
                                    iw = j * stride + q - pad
                                    if iw < 0 or iw >= wd:
                                        continue
                                    dw[o, c, p, q] += g * x[b, c, ih, iw]
                                    dx[b, c, ih, iw] += g * w[o, c, p, q]
    return dx_arr, dw_arr, db_arr


def maxpool_forward(const real[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = h // kh, wo = wd // kw

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((n, c, ho, wo), dtype=dtype)
    arg_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef real[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr

    cdef Py_ssize_t b, ch, i, j, p, q
    cdef real best, v
    cdef Py_ssize_t besti
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[b, ch, i * kh, j * kw]
                        besti = 0
                        for p in range(kh):
                            for q in range(kw):
                                v = x[b, ch, i * kh + p, j * kw + q]
                                # strict > keeps the first maximum on ties
                                if v > best:
                                    best = v
                                    besti = p * kw + q
                        y[b, ch, i, j] = best
                        arg[b, ch, i, j] = besti
    return y_arr, arg_arr


def maxpool_backward(const real[:, :, :, ::1] dy, const cnp.int64_t[:, :, :, ::1] arg,
                     int kh, int kw):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.zeros((n, c, ho * kh, wo * kw), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr

    cdef Py_ssize_t b, ch, i, j, a
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        a = arg[b, ch, i, j]
                        dx[b, ch, i * kh + a // kw, j * kw + a % kw] = dy[b, ch, i, j]
    return dx_arr


def avgpool_forward(const real[:, :, :, ::1] x, int kh, int kw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = h // kh, wo = wd // kw

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((n, c, ho, wo), dtype=dtype)
    cdef real[:, :, :, ::1] y = y_arr

    cdef Py_ssize_t b, ch, i, j, p, q
    cdef real acc, inv = <real>1.0 / (kh * kw)
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        acc = 0
                        for p in range(kh):
                            for q in range(kw):
                                acc += x[b, ch, i * kh + p, j * kw + q]
                        y[b, ch, i, j] = acc * inv
    return y_arr


def avgpool_backward(const real[:, :, :, ::1] dy, int kh, int kw):
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.empty((n, c, ho * kh, wo * kw), dtype=dtype)
    cdef real[:, :, :, ::1] dx = dx_arr

    cdef Py_ssize_t b, ch, i, j, p, q
    cdef real inv = <real>1.0 / (kh * kw)
    cdef real g
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    for j in range(wo):
                        g = dy[b, ch, i, j] * inv
                        for p in range(kh):
                            for q in range(kw):
                                dx[b, ch, i * kh + p, j * kw + q] = g
    return dx_arr
