"""Deterministic weight initializers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Uniform(+-sqrt(6/fan_in)), the ReLU-gain He initializer."""
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def scaled_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    """Uniform(+-1/sqrt(fan_in)); used for the LSTM weights."""
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape))
