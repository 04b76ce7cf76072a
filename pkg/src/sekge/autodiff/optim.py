"""Adam with bias correction."""

from __future__ import annotations

import numpy as np

from ..exceptions import TrainingError
from .tensor import Tensor


def adam_step(params: dict, grads: dict, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update of the numpy arrays in ``params``.

    ``state`` holds ``"t"`` plus per-name first/second moments under ``"m"``
    and ``"v"``; it is created on first use.  Names whose gradient is
    ``None`` are left untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.setdefault("m", {})
    state.setdefault("v", {})
    t = state["t"] = state.get("t", 0) + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state["m"].get(name)
        if m is None:
            m = state["m"][name] = np.zeros_like(p)
            state["v"][name] = np.zeros_like(p)
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)


class Adam:
    """Stateful wrapper over :func:`adam_step` for named tensors."""

    def __init__(self, params: dict[str, Tensor], lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.state: dict = {}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state, self.lr, self.betas[0], self.betas[1], self.eps,
        )
