"""Reverse-mode autodiff on float32 numpy buffers.

A ``Tensor`` wraps a C-contiguous float32 array and records the op that
produced it; ``backward`` walks the tape in reverse topological order and
accumulates ``grad`` buffers. Reductions accumulate in float64 before
casting back to float32.
"""
from __future__ import annotations

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2/pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.astype(np.float32, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every participating tensor that requires one.

        The receiver must be a scalar (a single element); repeated calls
        without ``zero_grad`` accumulate.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        seeds = {id(self): np.ones_like(self.data)}
        for node in order:
            g = seeds.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is not None:
                for parent, pg in zip(node._parents, node._backward(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    pg = _unbroadcast(pg, parent.data.shape)
                    key = id(parent)
                    prev = seeds.get(key)
                    seeds[key] = pg if prev is None else prev + pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) != 1 else axes[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softmax(self, axis: int = -1):
        return softmax(self, axis)


def _toposort(root: Tensor) -> list[Tensor]:
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _node(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise arithmetic ------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _node(a.data / b.data, (a, b),
                 lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _node(a.data @ b.data, (a, b), bwd)


# -- activations -----------------------------------------------------------
def relu(a) -> Tensor:
    a = _wrap(a)
    val = np.maximum(a.data, np.float32(0.0))
    mask = (a.data > 0).astype(np.float32)  # subgradient 0 at the kink
    return _node(val, (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """tanh-approximated GELU (the GPT lineage variant)."""
    a = _wrap(a)
    x = a.data
    u = _GELU_C * (x + 0.044715 * x * x * x)
    th = np.tanh(u)

    def bwd(g):
        sech2 = 1.0 - th * th
        du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * sech2 * du),)

    return _node(0.5 * x * (1.0 + th), (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-split form: never exponentiates a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    s = _sigmoid(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def sin(a) -> Tensor:
    a = _wrap(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = _wrap(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _node(s, (a,), bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    mu = a.data.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True, dtype=np.float64)
    inv = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    xhat = ((a.data - mu) * inv).astype(np.float32)

    def bwd(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (inv * (dxhat - m1 - xhat * m2), g * xhat, g)

    return _node(gain.data * xhat + bias.data, (a, gain, bias), bwd)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise binary cross entropy computed in the logit domain.

    ``max(z, 0) - z*y + log(1 + exp(-|z|))``; gradient flows to logits only.
    """
    logits, targets = _wrap(logits), _wrap(targets)
    z, y = logits.data, targets.data
    val = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return _node(val, (logits,), lambda g: (g * (_sigmoid(z) - y),))


# -- reductions and shape ops ----------------------------------------------
def _kept_shape(shape: tuple[int, ...], axis) -> tuple[int, ...]:
    """Reduction output shape with the reduced axes kept as size 1."""
    if axis is None:
        return (1,) * len(shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = {ax % len(shape) for ax in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    val = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def bwd(g):
        # reshape rather than expand_dims: scalar upstream grads may arrive
        # as shape (1,) since 0-d values are stored 1-d
        return (np.broadcast_to(g.reshape(_kept_shape(a.data.shape, axis)),
                                a.data.shape),)

    return _node(val, (a,), bwd)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    val = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]

    def bwd(g):
        g = np.broadcast_to(g.reshape(_kept_shape(a.data.shape, axis)),
                            a.data.shape)
        return (g / np.float32(count),)

    return _node(val, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    inv = np.argsort(axes)
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(np.ascontiguousarray(a.data[idx]), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)
