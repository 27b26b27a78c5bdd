"""Reverse-mode autodiff on dense numpy tensors.

A small define-by-run tape: every op records its parent tensors plus a
closure mapping the output gradient to parent gradients. The tape is
rebuilt on each forward pass and consumed by backward(). Only the ops
the codecs, the channel and the denoiser actually need exist; each has
an exact vector-Jacobian product (no numeric differentiation anywhere
in the forward/backward path).

float32 is the training dtype, float64 the verification dtype; switch
with set_default_dtype or the dtype_scope context manager.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import backend

_state = {"dtype": np.float32, "grad": True, "check_finite": False}


def default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state["dtype"] = dt.type


@contextlib.contextmanager
def dtype_scope(dtype):
    """Temporarily change the dtype new tensors are created with."""
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    """Disable tape recording (inference and sampling paths)."""
    old = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = old


def grad_enabled() -> bool:
    return _state["grad"]


def set_finite_checks(flag: bool) -> None:
    """When on, every op output is scanned for NaN/Inf. Slow; tests only."""
    _state["check_finite"] = bool(flag)


class Tensor:
    """N-d float array that optionally records onto the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_state["dtype"])
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; scalars stay python floats so numpy keeps the dtype
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return add(self, mul_scalar(other, -1.0))

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), float(other))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _op(data: np.ndarray, parents, vjp) -> Tensor:
    """Build an op node; records on the tape only when a parent needs grads."""
    if _state["check_finite"] and not np.all(np.isfinite(data)):
        raise FloatingPointError("op produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._done = False
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce gradient g back to the pre-broadcast shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Backprop from a scalar; accumulates into .grad of reachable leaves.

    The graph is consumed: a second backward on the same forward pass
    raises instead of silently returning wrong gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise RuntimeError("backward already ran on this graph; rebuild the forward pass")
    loss._done = True
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor with requires_grad")

    # iterative post-order DFS over op nodes
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p._vjp is not None and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        vjp = node._vjp
        if vjp is None:
            continue
        grads = vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
        node._vjp = None
        node._parents = ()
        if node is not loss:
            node.grad = None


# ---------------------------------------------------------------------------
# elementwise / arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    y = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _op(y, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    y = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _op(y, (a, b), vjp)


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _op(a.data + c, (a,), lambda g: (g,))


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return _op(a.data * c, (a,), lambda g: (g * c,))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    y = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _op(y, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _op(y, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _op(y, (a,), vjp)


def silu(a: Tensor) -> Tensor:
    s = sigmoid(Tensor(a.data)).data  # stable sigmoid, off-tape
    y = a.data * s

    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return _op(y, (a,), vjp)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    if not lo <= hi:
        raise ValueError(f"clamp bounds out of order: {lo} > {hi}")
    y = np.clip(a.data, lo, hi)

    def vjp(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return _op(y, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _op(y, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions / shape

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for ax in sorted(ax % a.data.ndim for ax in axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape),)

    return _op(np.asarray(y), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= a.data.shape[ax]
    return mul_scalar(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    y = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _op(y, (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    y = np.ascontiguousarray(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _op(y, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    y = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _op(y, tuple(tensors), vjp)


def index_axis(a: Tensor, axis: int, i: int) -> Tensor:
    """Select one index along an axis; the axis is dropped."""
    y = np.ascontiguousarray(np.take(a.data, i, axis=axis))

    def vjp(g):
        gx = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = i
        gx[tuple(sl)] = g
        return (gx,)

    return _op(y, (a,), vjp)


def take_rows(table: Tensor, ids) -> Tensor:
    """Row gather (embedding lookup). ids is an int array, not differentiated."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"take_rows wants 1-d ids, got shape {ids.shape}")
    if table.data.ndim != 2:
        raise ValueError(f"take_rows wants a 2-d table, got shape {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"row id out of range for table with {table.data.shape[0]} rows")
    y = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _op(y, (table,), vjp)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul wants >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}")
    y = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _op(y, (a, b), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [..., I] @ w [O, I]^T + b [O]."""
    if x.data.shape[-1] != w.data.shape[1]:
        raise ValueError(
            f"linear: input features {x.data.shape[-1]} != weight in-features {w.data.shape[1]}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        gx = (g @ w.data).reshape(x.data.shape)
        gw = g2.T @ x2
        gb = None if b is None else g2.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _op(y, parents, vjp)


# ---------------------------------------------------------------------------
# spatial ops

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation, NCHW layout, symmetric zero padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(
            f"conv2d wants 4-d x and w, got {x.data.shape} and {w.data.shape}")
    N, C, H, W = x.data.shape
    O, Cw, kH, kW = w.data.shape
    if C != Cw:
        raise ValueError(f"conv2d channel mismatch: input has {C}, weight expects {Cw}")
    if stride < 1:
        raise ValueError(f"conv2d stride must be >= 1, got {stride}")
    if kH > H + 2 * pad or kW > W + 2 * pad:
        raise ValueError(
            f"conv2d kernel {kH}x{kW} exceeds padded input {H + 2 * pad}x{W + 2 * pad}")
    y = backend.conv2d_forward(x.data, w.data, None if b is None else b.data,
                               stride, pad)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_grad_input(g, w.data, stride, pad, H, W)
        gw = backend.conv2d_grad_weight(g, x.data, stride, pad, kH, kW)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _op(y, parents, vjp)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of conv2d. Weight layout [C_in, C_out, kH, kW]."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(
            f"conv_transpose2d wants 4-d x and w, got {x.data.shape} and {w.data.shape}")
    N, C, H, W = x.data.shape
    Cw, O, kH, kW = w.data.shape
    if C != Cw:
        raise ValueError(
            f"conv_transpose2d channel mismatch: input has {C}, weight expects {Cw}")
    if stride < 1:
        raise ValueError(f"conv_transpose2d stride must be >= 1, got {stride}")
    Ho = (H - 1) * stride - 2 * pad + kH
    Wo = (W - 1) * stride - 2 * pad + kW
    if Ho < 1 or Wo < 1:
        raise ValueError(
            f"conv_transpose2d output {Ho}x{Wo} collapsed; check kernel/stride/pad")
    y = backend.conv2d_grad_input(np.ascontiguousarray(x.data), w.data,
                                  stride, pad, Ho, Wo)
    if b is not None:
        y = y + b.data.reshape(1, O, 1, 1)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_forward(g, w.data, None, stride, pad)
        gw = backend.conv2d_grad_weight(x.data, g, stride, pad, kH, kW)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _op(y, parents, vjp)


def nearest_upsample(x: Tensor, factor: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"nearest_upsample wants 4-d input, got {x.data.shape}")
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    N, C, H, W = x.data.shape
    y = np.ascontiguousarray(x.data.repeat(factor, axis=2).repeat(factor, axis=3))

    def vjp(g):
        return (g.reshape(N, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return _op(y, (x,), vjp)


def avg_pool(x: Tensor, k: int) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"avg_pool wants 4-d input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if H % k or W % k:
        raise ValueError(f"avg_pool window {k} does not divide spatial dims {H}x{W}")
    xr = reshape(x, (N, C, H // k, k, W // k, k))
    return tmean(xr, axis=(3, 5))


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Per-group standardization with learned affine; built from primitives."""
    if x.data.ndim != 4:
        raise ValueError(f"group_norm wants 4-d input, got {x.data.shape}")
    N, C, H, W = x.data.shape
    if C % groups:
        raise ValueError(f"group_norm: {groups} groups do not divide {C} channels")
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ValueError(
            f"group_norm affine shapes must be ({C},), got {gamma.data.shape} and {beta.data.shape}")
    xg = reshape(x, (N, groups, (C // groups) * H * W))
    mu = tmean(xg, axis=2, keepdims=True)
    xc = add(xg, mul_scalar(mu, -1.0))
    var = tmean(mul(xc, xc), axis=2, keepdims=True)
    inv = pow_scalar(add_scalar(var, eps), -0.5)
    xn = reshape(mul(xc, inv), (N, C, H, W))
    return add(mul(xn, reshape(gamma, (1, C, 1, 1))), reshape(beta, (1, C, 1, 1)))
