"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a float64 ``ndarray``. Every differentiable
operation records its parents and a closure that pushes the output
gradient back to them; :meth:`Tensor.backward` walks the graph in reverse
topological order. Matrix-valued operations broadcast over leading batch
dimensions, so a ``(d, N)`` statement encoding and a ``(B, d, N)`` batch
go through the same code.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

MASK_FILL = -1e9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.broadcast_to(grad, self.data.shape))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    def backward(g):
        x._accumulate(np.swapaxes(g, -1, -2))

    return _result(np.swapaxes(x.data, -1, -2), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ------------------------------------------------------------- elementwise

def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - y * y))

    return _result(y, (x,), backward)


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * y * (1.0 - y))

    return _result(y, (x,), backward)


def relu(x: Tensor) -> Tensor:
    on = x.data > 0

    def backward(g):
        x._accumulate(g * on)

    return _result(np.where(on, x.data, 0.0), (x,), backward)


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "linear": identity, None: identity}


def elementwise(name: str, x: Tensor) -> Tensor:
    try:
        fn = ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None
    return fn(x)


# ------------------------------------------------------------- fused layers

def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (broadcastable to ``x``, truthy = keep) adds ``MASK_FILL`` to
    excluded logits before normalising.
    """
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"softmax over an empty axis: shape {x.shape}")
    logits = x.data
    if mask is not None:
        logits = logits + np.where(np.asarray(mask, dtype=bool), 0.0, MASK_FILL)
    shape = np.broadcast_shapes(logits.shape, x.shape)
    flat = np.ascontiguousarray(np.broadcast_to(logits, shape).reshape(-1, shape[-1]))
    y = kernels.softmax_rows(flat).reshape(shape)

    def backward(g):
        gx = kernels.softmax_rows_backward(
            np.ascontiguousarray(y.reshape(-1, shape[-1])),
            np.ascontiguousarray(g.reshape(-1, shape[-1])),
        ).reshape(shape)
        x._accumulate(_unbroadcast(gx, x.shape))

    return _result(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each token column of a ``(..., d, N)`` tensor over ``d``."""
    lead = x.shape[:-2]
    d, n = x.shape[-2:]
    x3 = np.ascontiguousarray(x.data.reshape(-1, d, n))
    xhat3, inv_std = kernels.layer_norm_cols(x3, eps)
    xhat = xhat3.reshape(x.shape)
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gh = np.ascontiguousarray((g * gamma.data).reshape(-1, d, n))
            x._accumulate(kernels.layer_norm_cols_backward(gh, xhat3, inv_std).reshape(lead + (d, n)))

    return _result(out, (x, gamma, beta), backward)


def mean_pool(x: Tensor, mask=None) -> Tensor:
    """Masked mean over token columns: ``(..., d, N)`` -> ``(..., 1, d)``."""
    n = x.shape[-1]
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=np.float64)
    counts = np.asarray(m.sum(axis=-1))
    if np.any(counts == 0):
        raise DomainError("mean_pool: every position is masked")
    m = m[..., None, :]  # (..., 1, N)
    scale = m / counts[..., None, None]
    out = (x.data * scale).sum(axis=-1)[..., None, :]

    def backward(g):
        # g: (..., 1, d) -> (..., d, 1) broadcast over N
        x._accumulate(_unbroadcast(np.swapaxes(g, -1, -2) * scale, x.shape))

    return _result(out, (x,), backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Look up rows of ``table`` (V, d) and lay them out as ``(..., d, L)``."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.swapaxes(table.data[ids], -1, -2)

    def backward(g):
        rows = np.ascontiguousarray(np.swapaxes(g, -1, -2).reshape(-1, table.shape[1]))
        acc = np.zeros_like(table.data)
        kernels.scatter_add_rows(acc, np.ascontiguousarray(ids.reshape(-1)), rows)
        table._accumulate(acc)

    return _result(np.ascontiguousarray(out), (table,), backward)


def binary_cross_entropy(prob: Tensor, labels, weights=None, eps: float = 1e-7) -> Tensor:
    """Mean of ``-w * [y log p + (1-y) log(1-p)]`` with ``p`` clamped to ``[eps, 1-eps]``."""
    y = np.asarray(labels, dtype=np.float64).reshape(prob.shape)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64).reshape(prob.shape)
    p = np.clip(prob.data, eps, 1.0 - eps)
    inside = (prob.data > eps) & (prob.data < 1.0 - eps)
    n = p.size
    loss = -(w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))).sum() / n

    def backward(g):
        dp = -w * (y / p - (1.0 - y) / (1.0 - p)) / n
        prob._accumulate(g * dp * inside)

    return _result(np.asarray(loss), (prob,), backward)


# ------------------------------------------------------------ gradcheck

def relative_error(analytic, numeric, floor: float = 1e-5) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``.

    The floor keeps gradients that are identically zero (e.g. a key bias
    under softmax shift invariance) from turning finite-difference noise
    into a relative error of 1. Below the floor the check becomes an
    absolute one: ``||a - n|| < tol * floor``.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(loss_fn: Callable[[], float], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. every entry of ``t``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def gradcheck(build_loss: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-5) -> Dict[str, float]:
    """Compare backprop against central differences for each tensor.

    ``build_loss`` must rebuild the scalar loss from the current tensor
    values. Returns ``{name: relative_error}`` keyed by tensor name (or
    position when unnamed).
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = build_loss()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def scalar():
        with no_grad():
            return float(build_loss().data)

    out = {}
    for i, (t, a) in enumerate(zip(tensors, analytic)):
        out[t.name or str(i)] = relative_error(a, numeric_grad(scalar, t, step))
    return out
