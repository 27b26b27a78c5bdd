"""Adam optimizer (bias-corrected moment estimates)."""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One functional Adam update over parallel lists of arrays.

    state is a dict {"t": int, "m": [arr], "v": [arr]}; pass {} to start.
    Returns the new parameter arrays; state is updated in place.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            out.append(p)
            continue
        m = state["m"][i]
        v = state["v"][i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out


class Adam:
    """Stateful wrapper binding adam_step to a list of Tensors."""

    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: dict = {}

    def step(self) -> None:
        grads = [p.grad for p in self.params]
        new = adam_step([p.data for p in self.params], grads, self.state,
                        self.lr, self.beta1, self.beta2, self.eps)
        for p, d in zip(self.params, new):
            p.data = d

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
