"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the denoiser network: broadcast arithmetic, batched
matmul, reshapes, softmax, layer norm, GELU, max pooling, concat/split, and
reductions. Constants (plain ndarrays, python scalars) mix freely with
tracked tensors; gradients only flow into Tensors created with
``requires_grad=True``.

Within ``no_grad()`` no graph is recorded, which keeps inference cheap.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy import special

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _sum_to_shape(grad, shape):
    """Undo numpy broadcasting: reduce grad back down to `shape`."""
    if grad.shape == tuple(shape):
        return grad
    # sum out prepended axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad):
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g, a.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g, b.shape))

    out = _make(data, (a, b), backward)
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_sum_to_shape(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_sum_to_shape(gb, b.shape))

    return _make(data, (a, b), backward)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inv))

    return _make(data, (a,), backward)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def split(a, sections, axis):
    """Even split into `sections` pieces along `axis`."""
    a = as_tensor(a)
    pieces = np.split(a.data, sections, axis=axis)
    outs = []
    size = pieces[0].shape[axis]
    for i, piece in enumerate(pieces):
        lo = i * size

        def backward(g, lo=lo):
            full = np.zeros_like(a.data)
            idx = [slice(None)] * full.ndim
            idx[axis] = slice(lo, lo + size)
            full[tuple(idx)] = g
            a._accum(full)

        outs.append(_make(piece, (a,), backward))
    return outs


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).copy())

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gelu(a):
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        a._accum(g * (cdf + x * pdf))

    return _make(data, (a,), backward)


def softmax(a, axis=-1, additive_mask=None):
    """Softmax along `axis`; `additive_mask` is a constant ndarray added to the
    logits (use large negatives to mask keys)."""
    a = as_tensor(a)
    data = a.data + additive_mask if additive_mask is not None else a.data.copy()
    data -= data.max(axis=axis, keepdims=True)
    np.exp(data, out=data)
    data /= data.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        a._accum(data * (g - dot))

    return _make(data, (a,), backward)


def layer_norm(a, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance. No affine part;
    scale and shift come from conditioning where needed."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xhat = a.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / a.shape[-1]
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv

    def backward(g):
        m1 = g.mean(axis=-1, keepdims=True)
        m2 = (g * xhat).mean(axis=-1, keepdims=True)
        a._accum(inv * (g - m1 - xhat * m2))

    return _make(xhat, (a,), backward)


def max_pool(a, axis):
    """Max over one axis, routing the gradient to the (first) argmax."""
    a = as_tensor(a)
    data = a.data.max(axis=axis)
    arg = a.data.argmax(axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        idx = list(np.indices(g.shape))
        idx.insert(axis if axis >= 0 else a.ndim + axis, arg)
        full[tuple(idx)] = g
        a._accum(full)

    return _make(data, (a,), backward)
