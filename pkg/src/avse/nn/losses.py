"""Scalar losses used for mask training and the GAN objectives."""

from __future__ import annotations

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor

BCE_EPS = 1e-7


def _check_dims(pred: Tensor, target: Tensor, name: str) -> None:
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"{name}: shape mismatch {pred.shape} vs {target.shape}")


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy; predictions clamped to [eps, 1-eps]."""
    target = T._as_tensor(target)
    _check_dims(pred, target, "bce")
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    term = T.add(T.mul(target, T.log(p)), T.mul(1.0 - target, T.log(1.0 - p)))
    return -T.mean(term)


def l1(pred: Tensor, target) -> Tensor:
    """Mean absolute error."""
    target = T._as_tensor(target)
    _check_dims(pred, target, "l1")
    return T.mean(T.absolute(T.sub(pred, target)))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error."""
    target = T._as_tensor(target)
    _check_dims(pred, target, "mse")
    d = T.sub(pred, target)
    return T.mean(T.mul(d, d))
