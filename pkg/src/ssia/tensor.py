"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation records its inputs and a backward closure on
the output tensor, together with a global creation index. ``backward`` walks
the loss's ancestry in strictly decreasing creation order, i.e. exact reverse
execution order, visiting each recorded operation once. Gradients accumulate
additively on reuse; callers zero grads between optimization steps.

``stop_gradient`` returns a parentless tensor sharing the input's values, so
everything strictly upstream of it receives exactly zero gradient (its
``grad`` stays ``None``, which readers treat as zero).
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_node_counter = itertools.count(1)
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, numeric oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _check_broadcast(sa: tuple, sb: tuple) -> None:
    # Same rank; mismatched extents allowed only where one side is 1.
    if len(sa) != len(sb):
        raise ValueError(f"shapes {sa} and {sb} differ in rank; only singleton broadcasting between equal-rank tensors is supported")
    for da, db in zip(sa, sb):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g over the axes that were broadcast up from singleton extents."""
    if g.shape == shape:
        return g
    axes = tuple(i for i, (d, gd) in enumerate(zip(shape, g.shape)) if d == 1 and gd != 1)
    return g.sum(axis=axes, keepdims=True)


class Tensor:
    """Dense real array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "_order")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._grad_fn = None
        self._order = 0

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, grad_fn) -> "Tensor":
        """Wrap an op result; records the op only while grads are enabled."""
        if _grad_enabled and any(p.requires_grad for p in parents):
            out = cls(data, requires_grad=True)
            out._parents = parents
            out._grad_fn = grad_fn
            out._order = next(_node_counter)
            return out
        return cls(data)

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            _check_broadcast(self.shape, other.shape)
            a, b = self, other

            def grad_fn(g):
                return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

            return Tensor._from_op(self.data + other.data, (self, other), grad_fn)
        c = float(other)
        return Tensor._from_op(self.data + c, (self,), lambda g: (g,))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            _check_broadcast(self.shape, other.shape)
            a, b = self, other

            def grad_fn(g):
                return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

            return Tensor._from_op(self.data - other.data, (self, other), grad_fn)
        c = float(other)
        return Tensor._from_op(self.data - c, (self,), lambda g: (g,))

    def __rsub__(self, other) -> "Tensor":
        c = float(other)
        return Tensor._from_op(c - self.data, (self,), lambda g: (-g,))

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            _check_broadcast(self.shape, other.shape)
            a, b = self, other

            def grad_fn(g):
                return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

            return Tensor._from_op(self.data * other.data, (self, other), grad_fn)
        c = float(other)
        return Tensor._from_op(self.data * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            _check_broadcast(self.shape, other.shape)
            a, b = self, other

            def grad_fn(g):
                ga = _unbroadcast(g / b.data, a.shape)
                gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                return ga, gb

            return Tensor._from_op(self.data / other.data, (self, other), grad_fn)
        return self * (1.0 / float(other))

    def square(self) -> "Tensor":
        a = self
        return Tensor._from_op(self.data * self.data, (self,), lambda g: (2.0 * a.data * g,))

    def sqrt(self) -> "Tensor":
        out_data = np.sqrt(self.data)
        return Tensor._from_op(out_data, (self,), lambda g: (g * (0.5 / out_data),))

    def relu(self) -> "Tensor":
        a = self
        return Tensor._from_op(np.maximum(self.data, 0), (self,), lambda g: (g * (a.data > 0),))

    # -- linear algebra / shaping --------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            other = Tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError(f"matmul expects rank-2 tensors, got {self.shape} and {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ValueError(f"matmul inner extents differ: {self.shape} vs {other.shape}")
        a, b = self, other

        def grad_fn(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._from_op(self.data @ other.data, (self, other), grad_fn)

    def reshape(self, shape) -> "Tensor":
        old = self.data.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        if axes is not None and not isinstance(axes, tuple):
            axes = (axes,)
        in_shape = self.data.shape

        def grad_fn(g):
            if axes is None:
                return (np.broadcast_to(g, in_shape),)
            if not keepdims:
                kshape = list(in_shape)
                for ax in axes:
                    kshape[ax] = 1
                g = g.reshape(kshape)
            return (np.broadcast_to(g, in_shape),)

        return Tensor._from_op(self.data.sum(axis=axes, keepdims=keepdims), (self,), grad_fn)

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        if axes is not None and not isinstance(axes, tuple):
            axes = (axes,)
        in_shape = self.data.shape
        if axes is None:
            n = self.data.size
        else:
            n = 1
            for ax in axes:
                n *= in_shape[ax]

        def grad_fn(g):
            if axes is None:
                return (np.broadcast_to(g / n, in_shape),)
            if not keepdims:
                kshape = list(in_shape)
                for ax in axes:
                    kshape[ax] = 1
                g = g.reshape(kshape)
            return (np.broadcast_to(g / n, in_shape),)

        return Tensor._from_op(self.data.mean(axis=axes, keepdims=keepdims), (self,), grad_fn)


def stop_gradient(x: Tensor) -> Tensor:
    """Pass values through unchanged while severing the backward path."""
    return Tensor(x.data, requires_grad=False)


def backward(loss: Tensor) -> None:
    """Populate grads of every tensor reachable backward from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    # Collect the recorded ops in the loss's ancestry.
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._grad_fn is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._order, reverse=True)

    pending = {id(loss): np.ones_like(loss.data)}
    for t in nodes:
        g = pending.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        for p, pg in zip(t._parents, t._grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._grad_fn is None:
                p.grad = pg if p.grad is None else p.grad + pg
            elif id(p) in pending:
                pending[id(p)] = pending[id(p)] + pg
            else:
                pending[id(p)] = pg
    # A loss that is itself a leaf (constant) has no ops; grads stay zero.


def grad_of(t: Tensor) -> np.ndarray:
    """The accumulated gradient of t, with None read as exact zeros."""
    return np.zeros_like(t.data) if t.grad is None else t.grad


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic map from ``x`` to a scalar tensor and is
    re-evaluated with ``x.data`` perturbed elementwise in place, so it must
    read ``x`` afresh on every call. Error is measured per element as
    |analytic - numeric| / max(1, |analytic|).
    """
    if x.data.dtype != np.float64:
        raise ValueError(f"finite_diff_check requires float64 tensors, got {x.data.dtype}")
    if not x.requires_grad:
        raise ValueError("finite_diff_check target must have requires_grad=True")
    x.grad = None
    backward(f(x))
    analytic = grad_of(x).reshape(-1).copy()

    flat = x.data.reshape(-1)
    numeric = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(x).item()
            flat[i] = orig - step
            down = f(x).item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * step)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max())
