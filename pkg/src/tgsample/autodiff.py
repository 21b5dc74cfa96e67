"""A small reverse-mode autodiff over float64 numpy arrays.

Only the operations the samplers, backbones and losses need are provided.
Every op checks its output for NaN/Inf and raises ``NonFiniteError``.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check(data, op):
    # a finite sum proves every entry finite; only then skip the full scan
    if not np.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    return data


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, _op="tensor"):
        self.data = _check(np.asarray(data, dtype=np.float64), _op)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    parents = tuple(parents)
    track = grad_enabled() and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, True, None, parents, backward, op)
    return Tensor(data, False, None, (), None, op)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _make(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def matmul(x: Tensor, w: Tensor) -> Tensor:
    """``x[..., d_in] @ w[d_in, d_out]``; ``w`` must be 2-D."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ValueError(f"matmul shape mismatch {x.shape} @ {w.shape}")
    # run every product as one contiguous 2-D GEMM
    xshape, wd = x.shape, w.data
    x2 = np.ascontiguousarray(x.data).reshape(-1, xshape[-1])

    def back(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        return (g2 @ wd.T).reshape(xshape), x2.T @ g2

    return _make((x2 @ wd).reshape(*xshape[:-1], wd.shape[1]), (x, w), back, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    return _make(out, (x,), lambda g: (g * _sigmoid_np(-xd),), "log_sigmoid")


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def sin(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.sin(xd), (x,), lambda g: (g * np.cos(xd),), "sin")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside ``[lo, hi]``."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _make(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,), "clip")


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def concat(xs, axis=-1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def stack(xs, axis=0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    n = len(xs)
    return _make(np.stack([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)), "stack")


def getitem(x: Tensor, idx) -> Tensor:
    shape = x.shape
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (slice, int)) for p in parts)

    def back(g):
        full = np.zeros(shape)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), back, "getitem")


def take_rows(table: Tensor, index) -> Tensor:
    """Gather ``table[index]`` along axis 0; the gradient is scatter-added."""
    index = np.asarray(index, dtype=np.int64)
    shape = table.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index.reshape(-1), g.reshape(-1, *shape[1:]))
        return (full,)

    return _make(table.data[index], (table,), back, "take_rows")


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(np.where(cond, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa),
                            _unbroadcast(np.where(cond, 0.0, g), sb)), "where")


def masked_softmax(x: Tensor, mask, axis=-1) -> Tensor:
    """Softmax over ``axis`` restricted to ``mask``; fully masked rows give zeros."""
    mask = np.asarray(mask, dtype=bool)
    xd = np.where(mask, x.data, -np.inf)
    mx = np.max(xd, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data, 0.0) - mx), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back, "masked_softmax")


def scatter_rows(x: Tensor, index, size: int) -> Tensor:
    """Place ``x[i]`` at row ``index[i]`` of a zero array with ``size`` rows."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((size, *x.shape[1:]))
    out[index] = x.data
    return _make(out, (x,), lambda g: (g[index],), "scatter_rows")
