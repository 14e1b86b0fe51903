"""Minimal reverse-mode autodiff over dense float64 numpy buffers.

Only the operations the detector needs are provided. Each op records a
backward closure on a tape; Tensor.backward() walks the tape in reverse
topological order. Gradients are accumulated into .grad on every node that
(transitively) depends on a parameter, which is what Grad-CAM relies on to
read activations' gradients.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ShapeError
from . import backend

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode).

    Ops executed here return plain tensors with no parents, so forward
    activations are freed as soon as they go out of scope instead of being
    pinned by backward closures.
    """
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "retain_grad", "_parents",
                 "_backward_fn", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.retain_grad = False
        self._parents = parents
        self._backward_fn = backward_fn
        self.name = name

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        # iterative DFS topological sort: no recursion limit on deep tapes and,
        # crucially, no self-referential closure — a recursive visit() would
        # form a reference cycle pinning the whole tape until the cyclic GC runs
        order, seen, stack = [], set(), [(self, False)]
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
                stack.append((p, False))

        grad = np.asarray(grad, dtype=np.float64)
        self.grad = grad if self.grad is None else self.grad + grad
        # gradients are allocated lazily and intermediate ones are released as
        # soon as they have been propagated, so peak memory stays near the
        # largest single layer instead of the whole tape; the graph itself is
        # dismantled on the way so activation buffers captured by backward
        # closures are freed as early as possible
        for node in reversed(order):
            if node._backward_fn is None:
                continue
            if node.grad is not None:
                grads = node._backward_fn(node.grad)
                for parent, g in zip(node._parents, grads):
                    if g is None or not parent.requires_grad:
                        continue
                    g = _unbroadcast(np.asarray(g, dtype=np.float64),
                                     parent.data.shape)
                    if parent.grad is None:
                        parent.grad = np.array(g, copy=True)
                    else:
                        parent.grad += g
                if not node.retain_grad:
                    node.grad = None
            node._backward_fn = None
            node._parents = ()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"


class Parameter(Tensor):
    """A named trainable leaf."""

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)
        self.zero_grad()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _op(data, parents, backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


# -- arithmetic -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _op(a.data / b.data, (a, b),
               lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        return (g @ bt, at @ g)

    return _op(a.data @ b.data, (a, b), bw)


def texp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,))


def tlog(a):
    a = as_tensor(a)
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), lambda g: (g * 0.5 / out,))


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape),)

    return _op(out, (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape):
    a = as_tensor(a)
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, key):
    a = as_tensor(a)

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _op(a.data[key], (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis=0):
    return concat([reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:])
                   for t in tensors], axis=axis)


# -- nonlinearities and losses -------------------------------------------

def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _op(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _op(s, (a,), bw)


def bce_with_logits(logits, targets):
    """Elementwise binary cross-entropy computed from logits.

    Fused log-sum-exp form: loss = max(x, 0) - x*y + log(1 + exp(-|x|)),
    so large-magnitude logits never saturate.
    """
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    x = logits.data
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        p = 1.0 / (1.0 + np.exp(-x))
        return (g * (p - y),)

    return _op(loss, (logits,), bw)


# -- structured layers ----------------------------------------------------

def conv2d(x, w, b):
    """3x3 same-padding cross-correlation; x [N,Cin,H,W], w [Cout,Cin,3,3], b [Cout]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x [N,C,H,W] and w [Co,Ci,3,3]")
    if w.data.shape[2:] != (3, 3):
        raise ShapeError("conv2d kernel must be 3x3")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.data.shape[1]} vs kernel {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError("conv2d bias must have one entry per output channel")
    out = backend.conv2d_forward(x.data, w.data, b.data)

    def bw(g):
        need_gx = x.requires_grad
        gx, gw, gb = backend.conv2d_backward(x.data, w.data, np.ascontiguousarray(g),
                                             need_gx)
        return (gx, gw, gb)

    return _op(out, (x, w, b), bw)


def max_pool_2x2(x):
    """2x2/stride-2 max pooling; odd trailing rows/columns are dropped.

    Ties route the gradient to the first maximum in row-major window order,
    matching argmax over the flattened 2x2 block.
    """
    x = as_tensor(x)
    n, c, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    views = (x.data[:, :, 0 : h2 * 2 : 2, 0 : w2 * 2 : 2],
             x.data[:, :, 0 : h2 * 2 : 2, 1 : w2 * 2 : 2],
             x.data[:, :, 1 : h2 * 2 : 2, 0 : w2 * 2 : 2],
             x.data[:, :, 1 : h2 * 2 : 2, 1 : w2 * 2 : 2])
    out = np.maximum(np.maximum(views[0], views[1]),
                     np.maximum(views[2], views[3]))

    def bw(g):
        gx = np.zeros_like(x.data)
        slots = (gx[:, :, 0 : h2 * 2 : 2, 0 : w2 * 2 : 2],
                 gx[:, :, 0 : h2 * 2 : 2, 1 : w2 * 2 : 2],
                 gx[:, :, 1 : h2 * 2 : 2, 0 : w2 * 2 : 2],
                 gx[:, :, 1 : h2 * 2 : 2, 1 : w2 * 2 : 2])
        taken = np.zeros(out.shape, dtype=bool)
        for v, slot in zip(views, slots):
            hit = (v == out) & ~taken
            np.copyto(slot, g, where=hit)
            taken |= hit
        return (gx,)

    return _op(out, (x,), bw)


def adaptive_avg_pool_1x1(x):
    """Per-channel spatial mean; [N,C,H,W] -> [N,C]."""
    return tmean(x, axis=(2, 3))


def linear(x, w, b):
    """y = x W^T + b for x [..., d_in], w [d_out, d_in], b [d_out]."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.shape[-1] != w.data.shape[-1]:
        raise ShapeError(
            f"linear: input dim {x.data.shape[-1]} vs weight dim {w.data.shape[-1]}")
    return add(matmul(x, transpose(w, (1, 0))), b)


def l2_normalize(x, axis=-1, eps=1e-12):
    """x / (||x||_2 + eps) along an axis."""
    norm = tsqrt(tsum(mul(x, x), axis=axis, keepdims=True))
    return div(x, add(norm, eps))
