"""Convolution kernels against naive-loop oracles, both backends."""
import numpy as np
import pytest

from djscc import _kernels_numba, _kernels_numpy
from oracles import conv2d_naive

BACKENDS = [("numba", _kernels_numba), ("numpy", _kernels_numpy)]

SHAPES = [
    # (N, C, O, H, W, k, stride, pad)
    (2, 3, 4, 8, 8, 3, 1, 1),
    (1, 1, 1, 5, 5, 3, 2, 1),
    (2, 4, 6, 7, 9, 4, 2, 1),
    (3, 2, 2, 6, 6, 1, 1, 0),
    (1, 3, 5, 8, 8, 4, 4, 0),
    (2, 2, 3, 5, 7, 3, 1, 2),
]


def _case(shape, dtype, seed):
    N, C, O, H, W, k, stride, pad = shape
    r = np.random.default_rng(seed)
    x = r.standard_normal((N, C, H, W)).astype(dtype)
    w = r.standard_normal((O, C, k, k)).astype(dtype)
    b = r.standard_normal(O).astype(dtype)
    return x, w, b, stride, pad


@pytest.mark.parametrize("name,mod", BACKENDS)
@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_forward_matches_naive(name, mod, shape, dtype):
    x, w, b, stride, pad = _case(shape, dtype, hash(shape) % 1000)
    got = mod.conv2d_forward(x, w, b, stride, pad)
    want = conv2d_naive(x.astype(np.float64), w.astype(np.float64),
                        b.astype(np.float64), stride, pad)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    np.testing.assert_allclose(got, want, rtol=tol, atol=tol)
    assert got.dtype == dtype


@pytest.mark.parametrize("name,mod", BACKENDS)
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_input_is_adjoint(name, mod, shape):
    # <conv(x), gy> == <x, conv_grad_input(gy)> for all x, gy
    N, C, O, H, W, k, stride, pad = shape
    r = np.random.default_rng(7)
    x = r.standard_normal((N, C, H, W))
    w = r.standard_normal((O, C, k, k))
    y = mod.conv2d_forward(x, w, None, stride, pad)
    gy = r.standard_normal(y.shape)
    gx = mod.conv2d_grad_input(gy, w, stride, pad, H, W)
    assert gx.shape == x.shape
    np.testing.assert_allclose(np.sum(y * gy), np.sum(x * gx), rtol=1e-10)


@pytest.mark.parametrize("name,mod", BACKENDS)
@pytest.mark.parametrize("shape", SHAPES)
def test_grad_weight_is_adjoint(name, mod, shape):
    N, C, O, H, W, k, stride, pad = shape
    r = np.random.default_rng(11)
    x = r.standard_normal((N, C, H, W))
    w = r.standard_normal((O, C, k, k))
    y = mod.conv2d_forward(x, w, None, stride, pad)
    gy = r.standard_normal(y.shape)
    gw = mod.conv2d_grad_weight(gy, x, stride, pad, k, k)
    assert gw.shape == w.shape
    np.testing.assert_allclose(np.sum(y * gy), np.sum(w * gw), rtol=1e-10)


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree(shape, dtype):
    x, w, b, stride, pad = _case(shape, dtype, 99)
    N, C, O, H, W, k, _, _ = shape
    ya = _kernels_numba.conv2d_forward(x, w, b, stride, pad)
    yb = _kernels_numpy.conv2d_forward(x, w, b, stride, pad)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(ya, yb, rtol=tol, atol=tol)
    gy = np.random.default_rng(1).standard_normal(ya.shape).astype(dtype)
    np.testing.assert_allclose(
        _kernels_numba.conv2d_grad_input(gy, w, stride, pad, H, W),
        _kernels_numpy.conv2d_grad_input(gy, w, stride, pad, H, W),
        rtol=tol, atol=tol)
    np.testing.assert_allclose(
        _kernels_numba.conv2d_grad_weight(gy, x, stride, pad, k, k),
        _kernels_numpy.conv2d_grad_weight(gy, x, stride, pad, k, k),
        rtol=tol, atol=tol)


def test_identity_kernel_passthrough():
    # 1x1 identity weight, stride 1: convolution is the identity map
    x = np.random.default_rng(3).standard_normal((2, 3, 6, 6))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    for _, mod in BACKENDS:
        y = mod.conv2d_forward(x, w, None, 1, 0)
        np.testing.assert_array_equal(y, x)


def test_backend_env_selection():
    import djscc.backend as bk
    assert bk.BACKEND in ("numba", "numpy")
    assert bk.conv2d_forward is not None
