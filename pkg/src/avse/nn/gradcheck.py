"""Central finite-difference oracle for analytic gradients.

The numeric side never touches the vjp machinery: it re-runs the forward
closure with perturbed parameter values and differences the scalar loss.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, gradients


def finite_difference(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-6) -> np.ndarray:
    """d f() / d param by central differences, element by element."""
    base = param.data.copy()
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        param.data = base.copy()
        param.data.reshape(-1)[i] += eps
        hi = f().item()
        param.data = base.copy()
        param.data.reshape(-1)[i] -= eps
        lo = f().item()
        flat[i] = (hi - lo) / (2.0 * eps)
    param.data = base
    return grad


def max_relative_error(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Worst-case normalized gap between analytic and numeric gradients."""
    analytic = gradients(f(), params)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = finite_difference(f, p, eps)
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst
