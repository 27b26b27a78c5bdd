"""Pure numpy convolution kernels (fallback backend).

im2col via stride tricks feeding tensordot; col2im for the input
gradient as kH*kW strided slice accumulations. No python-level loop
runs over batch or spatial positions.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _cols(xp, kH, kW, stride, Ho, Wo):
    # view [N, C, kH, kW, Ho, Wo] into the padded input
    N, C, Hp, Wp = xp.shape
    sN, sC, sH, sW = xp.strides
    return as_strided(
        xp,
        shape=(N, C, kH, kW, Ho, Wo),
        strides=(sN, sC, sH, sW, sH * stride, sW * stride),
        writeable=False,
    )


def conv2d_forward(x, w, b, stride, pad):
    N, C, H, W = x.shape
    O, _, kH, kW = w.shape
    Ho = (H + 2 * pad - kH) // stride + 1
    Wo = (W + 2 * pad - kW) // stride + 1
    xp = _pad(x, pad)
    cols = _cols(xp, kH, kW, stride, Ho, Wo)
    # [O,C,kH,kW] x [N,C,kH,kW,Ho,Wo] -> [O,N,Ho,Wo]
    y = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    if b is not None:
        y += b.reshape(1, O, 1, 1)
    return y


def conv2d_grad_input(gy, w, stride, pad, H, W):
    N, O, Ho, Wo = gy.shape
    _, C, kH, kW = w.shape
    # [N,Ho,Wo,C,kH,kW]
    g = np.tensordot(gy, w, axes=([1], [0]))
    gx = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=gy.dtype)
    # scatter each kernel tap back onto its strided window
    for i in range(kH):
        for j in range(kW):
            gx[:, :, i:i + Ho * stride:stride, j:j + Wo * stride:stride] += \
                g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        gx = gx[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(gx)


def conv2d_grad_weight(gy, x, stride, pad, kH, kW):
    N, O, Ho, Wo = gy.shape
    C = x.shape[1]
    xp = _pad(x, pad)
    cols = _cols(xp, kH, kW, stride, Ho, Wo)
    # [N,O,Ho,Wo] x [N,C,kH,kW,Ho,Wo] -> [O,C,kH,kW]
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 4, 5]))
    return np.ascontiguousarray(gw)
