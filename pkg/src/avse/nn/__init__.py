"""Minimal differentiable tensor core: ops, layers, losses, Adam."""

from .gradcheck import finite_difference, max_relative_error
from .init import kaiming_uniform, scaled_uniform, zeros
from .layers import conv2d, dense, instance_norm, lstm_sequence, lstm_step, transposed_conv2d
from .losses import bce, l1, mse
from .optim import AdamState, adam_step
from .store import NamedTensorStore
from .tensor import (
    Tensor,
    absolute,
    add,
    backward,
    clip,
    concat,
    gradients,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    narrow,
    pad2d,
    relu,
    reshape,
    sigmoid,
    sub,
    tanh,
    total,
    transpose,
)

__all__ = [
    "AdamState",
    "NamedTensorStore",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "backward",
    "bce",
    "clip",
    "concat",
    "conv2d",
    "dense",
    "finite_difference",
    "gradients",
    "instance_norm",
    "kaiming_uniform",
    "l1",
    "leaky_relu",
    "log",
    "lstm_sequence",
    "lstm_step",
    "matmul",
    "max_relative_error",
    "mean",
    "mse",
    "mul",
    "narrow",
    "pad2d",
    "relu",
    "reshape",
    "scaled_uniform",
    "sigmoid",
    "sub",
    "tanh",
    "total",
    "transpose",
    "transposed_conv2d",
    "zeros",
]
