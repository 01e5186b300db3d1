"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .store import NamedTensorStore


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params: NamedTensorStore, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise UsageError("Adam lr must be > 0")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params: NamedTensorStore, grads: NamedTensorStore, state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name in params.names():
        if name not in grads:
            raise UsageError(f"missing gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name].data
        if g.shape != p.data.shape:
            raise UsageError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
