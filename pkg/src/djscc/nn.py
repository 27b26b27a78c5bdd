"""Small module system over autodiff tensors.

A Module is any object whose Tensor attributes are parameters (or
buffers when requires_grad is False). named_state walks attributes in
definition order, so construction order fixes checkpoint layout.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import (Tensor, conv2d, conv_transpose2d, group_norm, linear,
                       default_dtype)


class Module:
    def named_state(self, prefix: str = "") -> dict[str, Tensor]:
        """All tensors (parameters and buffers), name -> Tensor."""
        out: dict[str, Tensor] = {}
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor):
                out[key] = val
            elif isinstance(val, Module):
                out.update(val.named_state(f"{key}."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_state(f"{key}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return [t for t in self.named_state().values() if t.requires_grad]

    def set_trainable(self, flag: bool) -> None:
        for t in self.named_state().values():
            t.requires_grad = bool(flag)

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        state = self.named_state()
        missing = sorted(set(state) - set(arrays))
        extra = sorted(set(arrays) - set(state))
        if missing or extra:
            raise ValueError(f"state mismatch: missing={missing} extra={extra}")
        for name, t in state.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(t.data.shape):
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs model {t.data.shape}")
            t.data = np.asarray(arr, dtype=t.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_state().items()}


def _he(rng, shape, fan_in):
    std = math.sqrt(2.0 / fan_in)
    return rng.standard_normal(shape) * std


def _param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=default_dtype()), requires_grad=True)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=0, init_scale=1.0):
        self.stride = stride
        self.pad = pad
        self.w = _param(_he(rng, (c_out, c_in, k, k), c_in * k * k) * init_scale)
        self.b = _param(np.zeros(c_out))

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, pad=0, init_scale=1.0):
        self.stride = stride
        self.pad = pad
        self.w = _param(_he(rng, (c_in, c_out, k, k), c_in * k * k) * init_scale)
        self.b = _param(np.zeros(c_out))

    def __call__(self, x):
        return conv_transpose2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, init_scale=1.0, zero_init=False):
        if zero_init:
            self.w = _param(np.zeros((n_out, n_in)))
        else:
            self.w = _param(_he(rng, (n_out, n_in), n_in) * init_scale)
        self.b = _param(np.zeros(n_out))

    def __call__(self, x):
        return linear(x, self.w, self.b)


class GroupNorm(Module):
    """Group norm, group count clamped to the channel count."""

    def __init__(self, channels, groups=8, eps=1e-5):
        g = min(groups, channels)
        while channels % g:
            g -= 1
        self.groups = g
        self.eps = eps
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))

    def __call__(self, x):
        return group_norm(x, self.groups, self.gamma, self.beta, eps=self.eps)


def zero_conv(c_in, c_out, rng) -> Conv2d:
    """1x1 conv with zero weights and bias: an initially-silent connector."""
    conv = Conv2d(c_in, c_out, 1, rng)
    conv.w.data[...] = 0.0
    return conv


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Classic sin/cos position code for integer steps; numpy, off-tape.

    t: int scalar or [N] array. Returns [N, dim] float in the default dtype.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(default_dtype())
