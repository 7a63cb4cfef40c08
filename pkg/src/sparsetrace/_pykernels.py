"""Pure-numpy fallback kernels.

Forward kernels accumulate in the canonical order (kernel row, kernel col,
input channel for conv; input index for dense), one addition per step, so
results are bit-identical to a naive nested-loop evaluation and to the
compiled kernels. Backward kernels are deterministic but free to use BLAS.
"""

import numpy as np


def conv2d_forward(xp, w, stride):
    n, hp, wp, ci = xp.shape
    kh, kw, ci_w, co = w.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((n, ho, wo, co))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
            for c in range(ci):
                out += patch[:, :, :, c, None] * w[i, j, c, :]
    return out


def conv2d_backward_input(dout, w, stride, hp, wp):
    n, ho, wo, co = dout.shape
    kh, kw, ci, _ = w.shape
    dxp = np.zeros((n, hp, wp, ci))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += (
                dout @ w[i, j].T
            )
    return dxp


def conv2d_backward_kernel(xp, dout, kh, kw, stride):
    n, ho, wo, co = dout.shape
    ci = xp.shape[3]
    dw = np.zeros((kh, kw, ci, co))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
            dw[i, j] = np.tensordot(patch, dout, axes=([0, 1, 2], [0, 1, 2]))
    return dw


def dense_forward(x, w):
    n, d = x.shape
    m = w.shape[1]
    out = np.zeros((n, m))
    for k in range(d):
        out += x[:, k, None] * w[k, :]
    return out


def dense_backward(x, w, dout):
    return dout @ w.T, x.T @ dout


def maxpool_forward(x, window, stride):
    n, h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.full((n, ho, wo, c), -np.inf)
    # flat spatial index of the winning input element; first maximum wins
    arg = np.zeros((n, ho, wo, c), dtype=np.int64)
    for i in range(window):
        for j in range(window):
            patch = x[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :]
            better = patch > out
            out[better] = patch[better]
            rows = (np.arange(ho) * stride + i)[None, :, None, None]
            cols = (np.arange(wo) * stride + j)[None, None, :, None]
            idx = np.broadcast_to(rows * w + cols, arg.shape)
            arg[better] = idx[better]
    return out, arg


def maxpool_backward(dout, arg, h, w):
    n, ho, wo, c = dout.shape
    dx = np.zeros((n, h * w, c))
    ni, _, _, ci = np.ogrid[:n, :ho, :wo, :c]
    np.add.at(dx, (ni, arg, ci), dout)
    return dx.reshape(n, h, w, c)
