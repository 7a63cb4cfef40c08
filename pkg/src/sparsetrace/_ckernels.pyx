# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled hot kernels. Forward accumulation order matches _pykernels
# exactly (kernel row, kernel col, input channel; input index for dense),
# so both backends produce bit-identical forward results.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] xp, double[:, :, :, ::1] w, int stride):
    cdef Py_ssize_t n = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], ci = xp.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n, ho, wo, co))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, i, j, c, o
    cdef double xv
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(ci):
                                xv = xp[b, y * stride + i, x * stride + j, c]
                                for o in range(co):
                                    out[b, y, x, o] += xv * w[i, j, c, o]
    return out_arr


def conv2d_backward_input(double[:, :, :, ::1] dout, double[:, :, :, ::1] w,
                          int stride, Py_ssize_t hp, Py_ssize_t wp):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], co = dout.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], ci = w.shape[2]
    dxp_arr = np.zeros((n, hp, wp, ci))
    cdef double[:, :, :, ::1] dxp = dxp_arr
    cdef Py_ssize_t b, y, x, i, j, c, o
    cdef double g
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    for o in range(co):
                        g = dout[b, y, x, o]
                        for i in range(kh):
                            for j in range(kw):
                                for c in range(ci):
                                    dxp[b, y * stride + i, x * stride + j, c] += g * w[i, j, c, o]
    return dxp_arr


def conv2d_backward_kernel(double[:, :, :, ::1] xp, double[:, :, :, ::1] dout,
                           Py_ssize_t kh, Py_ssize_t kw, int stride):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], co = dout.shape[3]
    cdef Py_ssize_t ci = xp.shape[3]
    dw_arr = np.zeros((kh, kw, ci, co))
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef Py_ssize_t b, y, x, i, j, c, o
    cdef double xv
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(ci):
                                xv = xp[b, y * stride + i, x * stride + j, c]
                                for o in range(co):
                                    dw[i, j, c, o] += xv * dout[b, y, x, o]
    return dw_arr


def dense_forward(double[:, ::1] x, double[:, ::1] w):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], m = w.shape[1]
    out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, k, o
    cdef double xv
    with nogil:
        for b in range(n):
            for k in range(d):
                xv = x[b, k]
                for o in range(m):
                    out[b, o] = out[b, o] + xv * w[k, o]
    return out_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] dout):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], m = w.shape[1]
    dx_arr = np.zeros((n, d))
    dw_arr = np.zeros((d, m))
    cdef double[:, ::1] dx = dx_arr
    cdef double[:, ::1] dw = dw_arr
    cdef Py_ssize_t b, k, o
    cdef double g
    with nogil:
        for b in range(n):
            for o in range(m):
                g = dout[b, o]
                for k in range(d):
                    dx[b, k] += g * w[k, o]
        for b in range(n):
            for k in range(d):
                g = x[b, k]
                for o in range(m):
                    dw[k, o] += g * dout[b, o]
    return dx_arr, dw_arr


def maxpool_forward(double[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = (h - window) // stride + 1
    cdef Py_ssize_t wo = (w - window) // stride + 1
    out_arr = np.empty((n, ho, wo, c))
    arg_arr = np.zeros((n, ho, wo, c), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t b, y, x_, i, j, ch, hi, wi
    cdef double best, v
    cdef long long besti
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x_ in range(wo):
                    for ch in range(c):
                        best = -1e308
                        besti = 0
                        for i in range(window):
                            for j in range(window):
                                hi = y * stride + i
                                wi = x_ * stride + j
                                v = x[b, hi, wi, ch]
                                if v > best:
                                    best = v
                                    besti = hi * w + wi
                        out[b, y, x_, ch] = best
                        arg[b, y, x_, ch] = besti
    return out_arr, arg_arr


def maxpool_backward(double[:, :, :, ::1] dout, long long[:, :, :, ::1] arg,
                     Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dout.shape[0], ho = dout.shape[1], wo = dout.shape[2], c = dout.shape[3]
    dx_arr = np.zeros((n, h, w, c))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, y, x_, ch
    cdef long long f
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x_ in range(wo):
                    for ch in range(c):
                        f = arg[b, y, x_, ch]
                        dx[b, f // w, f % w, ch] += dout[b, y, x_, ch]
    return dx_arr
