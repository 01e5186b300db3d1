"""Ordered name -> Tensor mapping for weights, gradients and optimizer state."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


class NamedTensorStore:
    """Insertion-ordered map of unique names to tensors."""

    def __init__(self):
        self._items: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._items:
            raise UsageError(f"duplicate tensor name {name!r}")
        if tensor.name is None:
            tensor.name = name
        self._items[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._items[name]
        except KeyError:
            raise UsageError(f"no tensor named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def tensors(self) -> list[Tensor]:
        return list(self._items.values())

    def items(self):
        return self._items.items()

    def copy(self) -> "NamedTensorStore":
        dup = NamedTensorStore()
        for name, t in self._items.items():
            dup.add(name, Tensor(t.data.copy()))
        return dup

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "NamedTensorStore":
        store = cls()
        for name, arr in arrays.items():
            store.add(name, Tensor(np.asarray(arr)))
        return store
