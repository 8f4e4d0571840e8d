"""Dense reverse-mode autodiff on top of numpy.

Every op builds its output eagerly and attaches a closure that pushes the
output gradient back to its parents. ``Tensor.backward`` walks the graph in
reverse topological order. Broadcasting is limited to the numpy rules the
model actually needs (bias rows, batched matmul against shared weights,
per-row scalars).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DegenerateMaskError, ShapeError

DTYPE = np.float64


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(values, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.values = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.values.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.values)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return index(self, key)

    @property
    def T(self) -> "Tensor":
        return swap_last(self)


def _topological_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(values)
    out = Tensor(values, _parents=tuple(parents), _backward=backward)
    out.requires_grad = True
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.values + b.values, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.values - b.values, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.values * b.values, (a, b),
                 lambda g: (unbroadcast(g * b.values, a.shape),
                            unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.values / b.values
    return _make(out, (a, b),
                 lambda g: (unbroadcast(g / b.values, a.shape),
                            unbroadcast(-g * out / b.values, b.shape)))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.values)

    def backward(g):
        # subgradient 0 at the origin keeps std() of a constant vector finite
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _make(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.values), (a,), lambda g: (g / a.values,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else unbroadcast(ga, a.shape),
                None if gb is None else unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward)


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.values.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


# ---------------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _make(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swap_last(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.values, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.values for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def index(a, key) -> Tensor:
    """Numpy-style indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.values[key], (a,), backward)


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _make(table.values[ids], (table,), backward)


def scatter_rows(a, rows, n: int) -> Tensor:
    """Place row ``i`` of ``a`` at row ``rows[i]`` of an ``n``-row zero tensor."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    out = np.zeros((n,) + a.shape[1:], dtype=DTYPE)
    np.add.at(out, rows, a.values)
    return _make(out, (a,), lambda g: (g[rows],))


# ---------------------------------------------------------------- nonlinearities

def leaky_relu(a, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = as_tensor(a)
    scale = np.where(a.values > 0, 1.0, slope)
    return _make(a.values * scale, (a,), lambda g: (g * scale,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.values)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _stable_sigmoid(x),))


def activation(a, kind: str, slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "softplus":
        return softplus(a)
    if kind == "sigmoid":
        return sigmoid(a)
    raise ConfigError(f"unknown activation kind {kind!r}")


def softmax_masked(logits, mask=None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False come out exactly 0.

    ``mask`` broadcasts against ``logits``. Each reduced slice needs at least
    one unmasked entry.
    """
    logits = as_tensor(logits)
    x = logits.values
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not keep.any(axis=axis).all():
            raise DegenerateMaskError("softmax over a fully masked slice")
    shifted = np.where(keep, x, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (logits,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.values + bias.values
    n = x.shape[-1]

    def backward(g):
        gxhat = g * gain.values
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True) / n)
        return (gx, unbroadcast(g * xhat, gain.shape), unbroadcast(g, bias.shape))

    return _make(out, (x, gain, bias), backward)


# ---------------------------------------------------------------- losses

BCE_EPS = 1e-7


def bce(y, p) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [eps, 1-eps]."""
    y, p = as_tensor(y), as_tensor(p)
    if y.shape != p.shape:
        raise ShapeError(f"bce: label shape {y.shape} != prediction shape {p.shape}")
    q = np.clip(p.values, BCE_EPS, 1.0 - BCE_EPS)
    t = y.values
    n = q.size
    out = -(t * np.log(q) + (1.0 - t) * np.log(1.0 - q)).mean()
    inside = (p.values >= BCE_EPS) & (p.values <= 1.0 - BCE_EPS)

    def backward(g):
        gp = g * (-(t / q) + (1.0 - t) / (1.0 - q)) / n
        return (None, np.where(inside, gp, 0.0))

    return _make(np.asarray(out), (y, p), backward)


def mse(y, p) -> Tensor:
    y, p = as_tensor(y), as_tensor(p)
    if y.shape != p.shape:
        raise ShapeError(f"mse: label shape {y.shape} != prediction shape {p.shape}")
    diff = p.values - y.values
    n = diff.size

    def backward(g):
        return (-2.0 * g * diff / n, 2.0 * g * diff / n)

    return _make(np.asarray((diff ** 2).mean()), (y, p), backward)


def pointwise_loss(y, p, kind: str) -> Tensor:
    if kind == "bce":
        return bce(y, p)
    if kind == "mse":
        return mse(y, p)
    raise ConfigError(f"unknown loss kind {kind!r}")

