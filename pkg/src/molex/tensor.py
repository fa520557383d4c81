"""Dense float64 tensors with reverse-mode automatic differentiation.

Arrays are row-major numpy float64 throughout; numpy supplies the dense
kernels, this module owns the graph. Every op that sees a tracked input
records its parents and a gradient closure; ``backward`` on a scalar loss
replays the recorded nodes in reverse topological order exactly once.

Double precision is non-negotiable here: the gradient tests compare
against central finite differences at 1e-4 relative error, which float32
cannot sustain.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from scipy.special import erf, expit

INV_SQRT2 = 0.7071067811865476
INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Suspend graph recording inside the block (evaluation mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-d float64 array with optional gradient-tape participation.

    Treat tensors as immutable after creation; the optimizer is the only
    code that writes ``data`` in place.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    # autograd core --------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every tracked ancestor of this scalar."""
        if self.data.size != 1:
            _scalar_err(self)
        tape = _trace(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _scalar_err(t: Tensor):
    raise ValueError(f"expected a scalar tensor, got shape {t.data.shape}")


def _trace(root: Tensor) -> list:
    """Ancestors of root in topological order, each visited exactly once."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents, grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = grad_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Never allocates a gradient on untracked tensors. The first arrival
    # copies (g is often a view into another node's buffer); later ones add.
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise ops ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _from_op(data, (a, b), grad_fn)


def scale(t, factor: float) -> Tensor:
    """Multiply by a python scalar (kept separate for readability at call sites)."""
    return mul(t, float(factor))


def power(t, p: float) -> Tensor:
    t = as_tensor(t)
    p = float(p)
    data = t.data ** p

    def grad_fn(g):
        _accumulate(t, g * p * t.data ** (p - 1.0))

    return _from_op(data, (t,), grad_fn)


def exp(t) -> Tensor:
    t = as_tensor(t)
    data = np.exp(t.data)

    def grad_fn(g):
        _accumulate(t, g * data)

    return _from_op(data, (t,), grad_fn)


def log(t) -> Tensor:
    t = as_tensor(t)
    data = np.log(t.data)

    def grad_fn(g):
        _accumulate(t, g / t.data)

    return _from_op(data, (t,), grad_fn)


def sqrt(t) -> Tensor:
    t = as_tensor(t)
    data = np.sqrt(t.data)

    def grad_fn(g):
        _accumulate(t, g * 0.5 / data)

    return _from_op(data, (t,), grad_fn)


def sigmoid(t) -> Tensor:
    t = as_tensor(t)
    data = expit(t.data)

    def grad_fn(g):
        _accumulate(t, g * data * (1.0 - data))

    return _from_op(data, (t,), grad_fn)


def softplus(t) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    t = as_tensor(t)
    data = np.logaddexp(0.0, t.data)

    def grad_fn(g):
        _accumulate(t, g * expit(t.data))

    return _from_op(data, (t,), grad_fn)


def gelu(t) -> Tensor:
    """Exact erf-form GELU: 0.5 x (1 + erf(x / sqrt(2)))."""
    t = as_tensor(t)
    x = t.data
    phi = 0.5 * (1.0 + erf(x * INV_SQRT2))
    data = x * phi

    def grad_fn(g):
        density = np.exp(-0.5 * x * x) * INV_SQRT_2PI
        _accumulate(t, g * (phi + x * density))

    return _from_op(data, (t,), grad_fn)


def clip(t, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the unclamped interior."""
    t = as_tensor(t)
    data = np.clip(t.data, lo, hi)

    def grad_fn(g):
        _accumulate(t, g * ((t.data > lo) & (t.data < hi)))

    return _from_op(data, (t,), grad_fn)


# structural ops -----------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def grad_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    return _from_op(data, (a, b), grad_fn)


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    shape = tuple(int(s) for s in shape)
    data = t.data.reshape(shape)

    def grad_fn(g):
        _accumulate(t, g.reshape(t.data.shape))

    return _from_op(data, (t,), grad_fn)


def transpose(t, axes=None) -> Tensor:
    t = as_tensor(t)
    axes = tuple(range(t.data.ndim))[::-1] if axes is None else tuple(axes)
    data = np.transpose(t.data, axes)
    inverse = np.argsort(axes)

    def grad_fn(g):
        _accumulate(t, np.transpose(g, inverse))

    return _from_op(data, (t,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def grad_fn(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + s)
                _accumulate(t, g[tuple(index)])
            offset += s

    return _from_op(data, tuple(tensors), grad_fn)


def take(t, indices, axis: int = 0) -> Tensor:
    """Gather slices along an axis by a 1-D integer index (embedding lookup)."""
    t = as_tensor(t)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take: index must be 1-D, got shape {idx.shape}")
    data = np.take(t.data, idx, axis=axis)

    def grad_fn(g):
        if t.requires_grad:
            full = np.zeros_like(t.data)
            np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
            _accumulate(t, full)

    return _from_op(data, (t,), grad_fn)


# reductions ---------------------------------------------------------

def _spread(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def reduce_sum(t, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    data = t.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        _accumulate(t, _spread(g, t.data.shape, axis, keepdims))

    return _from_op(np.asarray(data), (t,), grad_fn)


def reduce_mean(t, axis=None, keepdims: bool = False) -> Tensor:
    t = as_tensor(t)
    data = t.data.mean(axis=axis, keepdims=keepdims)
    count = t.data.size / max(data.size, 1)

    def grad_fn(g):
        _accumulate(t, _spread(g, t.data.shape, axis, keepdims) / count)

    return _from_op(np.asarray(data), (t,), grad_fn)


# composites ---------------------------------------------------------

def softmax(t, axis: int = -1) -> Tensor:
    """Row-stochastic softmax, stabilized by max subtraction."""
    t = as_tensor(t)
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(t, y * (g - inner))

    return _from_op(y, (t,), grad_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Fused primitive (this op dominates the backbone's node count).
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv
    data = normed * gain.data + bias.data

    def grad_fn(g):
        if gain.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * normed).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gain.data
            mean_gx = gx.mean(axis=-1, keepdims=True)
            mean_gx_normed = (gx * normed).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - mean_gx - normed * mean_gx_normed))

    return _from_op(data, (x, gain, bias), grad_fn)
