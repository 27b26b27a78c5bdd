"""Numba convolution kernels (default backend).

The jitted loops only build/scatter im2col buffers; the arithmetic
itself goes through np.dot so BLAS does the heavy lifting. That layout
beat both naive jitted loops and numpy stride tricks at every desk
shape in benchmarks/bench_kernels.py.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _pad_nb(x, pad):
    N, C, H, W = x.shape
    xp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + H, pad:pad + W] = x
    return xp


@njit(cache=True)
def _im2col(xp, kH, kW, stride, Ho, Wo):
    N, C, Hp, Wp = xp.shape
    cols = np.empty((C * kH * kW, N * Ho * Wo), dtype=xp.dtype)
    for c in range(C):
        for i in range(kH):
            for j in range(kW):
                r = (c * kH + i) * kW + j
                idx = 0
                for n in range(N):
                    for oh in range(Ho):
                        ih = oh * stride + i
                        for ow in range(Wo):
                            cols[r, idx] = xp[n, c, ih, ow * stride + j]
                            idx += 1
    return cols


@njit(cache=True)
def _conv2d_forward_nb(x, w2, b, stride, pad, kH, kW, Ho, Wo):
    N = x.shape[0]
    O = w2.shape[0]
    xp = _pad_nb(x, pad) if pad > 0 else x
    cols = _im2col(xp, kH, kW, stride, Ho, Wo)
    y2 = np.dot(w2, cols)  # [O, N*Ho*Wo]
    y = np.empty((N, O, Ho, Wo), dtype=x.dtype)
    for o in range(O):
        idx = 0
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    y[n, o, oh, ow] = y2[o, idx] + b[o]
                    idx += 1
    return y


@njit(cache=True)
def _conv2d_grad_input_nb(gy, w2t, stride, pad, kH, kW, C, H, W):
    N, O, Ho, Wo = gy.shape
    gy2 = np.empty((O, N * Ho * Wo), dtype=gy.dtype)
    for o in range(O):
        idx = 0
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    gy2[o, idx] = gy[n, o, oh, ow]
                    idx += 1
    g2 = np.dot(w2t, gy2)  # [C*kH*kW, N*Ho*Wo]
    gxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    for c in range(C):
        for i in range(kH):
            for j in range(kW):
                r = (c * kH + i) * kW + j
                idx = 0
                for n in range(N):
                    for oh in range(Ho):
                        ih = oh * stride + i
                        for ow in range(Wo):
                            gxp[n, c, ih, ow * stride + j] += g2[r, idx]
                            idx += 1
    if pad > 0:
        return np.ascontiguousarray(gxp[:, :, pad:pad + H, pad:pad + W])
    return gxp


@njit(cache=True)
def _conv2d_grad_weight_nb(gy, x, stride, pad, kH, kW):
    N, O, Ho, Wo = gy.shape
    C = x.shape[1]
    xp = _pad_nb(x, pad) if pad > 0 else x
    cols = _im2col(xp, kH, kW, stride, Ho, Wo)
    gy2 = np.empty((O, N * Ho * Wo), dtype=gy.dtype)
    for o in range(O):
        idx = 0
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    gy2[o, idx] = gy[n, o, oh, ow]
                    idx += 1
    gw2 = np.dot(gy2, cols.T)  # [O, C*kH*kW]
    return gw2.reshape(O, C, kH, kW)


def conv2d_forward(x, w, b, stride, pad):
    N, C, H, W = x.shape
    O, _, kH, kW = w.shape
    Ho = (H + 2 * pad - kH) // stride + 1
    Wo = (W + 2 * pad - kW) // stride + 1
    x = np.ascontiguousarray(x)
    w2 = np.ascontiguousarray(w.reshape(O, C * kH * kW))
    if b is None:
        b = np.zeros(O, dtype=x.dtype)
    return _conv2d_forward_nb(x, w2, np.ascontiguousarray(b),
                              stride, pad, kH, kW, Ho, Wo)


def conv2d_grad_input(gy, w, stride, pad, H, W):
    O, C, kH, kW = w.shape
    gy = np.ascontiguousarray(gy)
    w2t = np.ascontiguousarray(w.reshape(O, C * kH * kW).T)
    return _conv2d_grad_input_nb(gy, w2t, stride, pad, kH, kW, C, H, W)


def conv2d_grad_weight(gy, x, stride, pad, kH, kW):
    return _conv2d_grad_weight_nb(np.ascontiguousarray(gy),
                                  np.ascontiguousarray(x),
                                  stride, pad, kH, kW)
