"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ndarray plus the record of the operation that
produced it (parents + a vector-Jacobian closure). :func:`backward` replays
the record in reverse topological order and accumulates gradients into the
leaves. The op set is deliberately small: exactly what the mask-prediction
network and the visual GAN need.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError, ShapeError, UsageError

Array = np.ndarray


class Tensor:
    """N-dimensional real array, optionally carrying its autodiff record."""

    __slots__ = ("data", "name", "_parents", "_vjp")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[Array], tuple] | None = None,
        name: str | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.name = name
        self._parents = parents
        self._vjp = vjp

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Cut the record: same values, no gradient flow."""
        return Tensor(self.data, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # Arithmetic sugar; operands may be Tensors, arrays or scalars.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return Tensor(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return Tensor(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product [N,K] @ [K,M]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul expects [N,K]@[K,M], got {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    return Tensor(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    src = a.data.shape
    return Tensor(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, tuple(tensors), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` elements along ``axis``."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return Tensor(out, (a,), vjp)


def _reflect_indices(n: int, lo: int, hi: int) -> Array:
    """Source index for each position of an axis reflect-padded by (lo, hi)."""
    p = np.arange(-lo, n + hi)
    if n == 1:
        return np.zeros_like(p)
    q = np.abs(p) % (2 * n - 2)
    return np.where(q < n, q, 2 * n - 2 - q)


def pad2d(a: Tensor, pads: tuple[tuple[int, int], tuple[int, int]], mode: str = "constant") -> Tensor:
    """Pad the spatial axes of an [H,W,C] image or a [B,H,W,C] batch.

    ``mode`` is 'constant' (zeros) or 'reflect' (no edge repeat).
    """
    if a.data.ndim not in (3, 4):
        raise ShapeError(f"pad2d expects [B?,H,W,C], got {a.data.shape}")
    (pt, pb), (pl, pr) = pads
    batched = a.data.ndim == 4
    full_pads = ((pt, pb), (pl, pr), (0, 0))
    if batched:
        full_pads = ((0, 0),) + full_pads
    out = np.pad(a.data, full_pads, mode=mode)
    h, w = a.data.shape[-3], a.data.shape[-2]

    def vjp(g):
        if mode == "constant":
            return (g[..., pt : pt + h, pl : pl + w, :].copy(),)
        grad = np.zeros_like(a.data)
        ri = _reflect_indices(h, pt, pb)
        ci = _reflect_indices(w, pl, pr)
        if batched:
            np.add.at(grad, (slice(None), ri[:, None], ci[None, :]), g)
        else:
            np.add.at(grad, (ri[:, None], ci[None, :]), g)
        return (grad,)

    return Tensor(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0
    return Tensor(out, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data > 0, 1.0, alpha)
    return Tensor(a.data * slope, (a,), lambda g: (g * slope,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return Tensor(out, (a,), lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)
    return Tensor(out, (a,), lambda g: (g * inside,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return Tensor(np.abs(a.data), (a,), lambda g: (g * sign,))


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def vjp(g):
        return (np.full_like(a.data, float(g) / n),)

    return Tensor(a.data.mean(), (a,), vjp)


def total(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.full_like(a.data, float(g)),)

    return Tensor(a.data.sum(), (a,), vjp)


# ---------------------------------------------------------------------------
# Backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[int, Array]:
    """Accumulate d(loss)/d(leaf) for every leaf reachable from ``loss``.

    Returns a map keyed by ``id(tensor)``. Raises if ``loss`` is not a scalar
    produced by a recorded computation.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss._parents:
        raise UsageError("backward called on a tensor with no recorded computation")
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        if node._vjp is None:
            continue  # leaf: keep its accumulated gradient
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[Array]:
    """Gradient of ``loss`` for each tensor in ``params`` (zeros if unused)."""
    gmap = backward(loss)
    return [gmap.get(id(p), np.zeros_like(p.data)) for p in params]


def assert_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.isfinite(t.data).all():
        raise NumericError(f"{what} contains non-finite values")
