"""A small reverse-mode autodiff engine over numpy arrays.

Every function here accepts either plain ndarrays (returning ndarrays,
no graph built) or Tensor nodes (returning Tensors), so numerical code
like the BRDF can be written once and reused for both fast rendering and
differentiable training. Gradients of max/clip are zero on the clamped
side, including exactly at the boundary.

Only basic slicing is supported in Tensor indexing (no fancy indexing),
which keeps the scatter in the backward pass a plain assignment.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf as _erf

Arrayish = "np.ndarray | Tensor | float"


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_vjps")

    # make ndarray <op> Tensor defer to the reflected Tensor operator
    # instead of numpy coercing the Tensor into an object array
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjps=()):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._vjps = _vjps

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return asum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return amean(self, axis=axis, keepdims=keepdims)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _node(data: np.ndarray, parents, vjps) -> Tensor:
    live = tuple(p.requires_grad for p in parents)
    if any(live):
        return Tensor(data, requires_grad=True, _parents=parents, _vjps=vjps)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _binary(a, b, fwd, vjp_a, vjp_b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return fwd(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    ta, tb = _lift(a), _lift(b)
    out = fwd(ta.data, tb.data)
    return _node(
        out,
        (ta, tb),
        (
            lambda g: _unbroadcast(vjp_a(g, ta.data, tb.data, out), ta.data.shape),
            lambda g: _unbroadcast(vjp_b(g, ta.data, tb.data, out), tb.data.shape),
        ),
    )


def _unary(x, fwd, vjp):
    if not isinstance(x, Tensor):
        return fwd(np.asarray(x, dtype=np.float64))
    out = fwd(x.data)
    return _node(out, (x,), (lambda g: vjp(g, x.data, out),))


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y)
    )


def power(x, exponent: float):
    e = float(exponent)
    return _unary(x, lambda v: v**e, lambda g, v, o: g * e * v ** (e - 1.0))


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v)


def log1p(x):
    return _unary(x, np.log1p, lambda g, v, o: g / (1.0 + v))


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, o: g * 0.5 / o)


def tanh(x):
    return _unary(x, np.tanh, lambda g, v, o: g * (1.0 - o * o))


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    def fwd(v):
        return 0.5 * v * (1.0 + _erf(v * _SQRT1_2))

    def vjp(g, v, o):
        cdf = 0.5 * (1.0 + _erf(v * _SQRT1_2))
        pdf = np.exp(-0.5 * v * v) * _INV_SQRT_2PI
        return g * (cdf + v * pdf)

    return _unary(x, fwd, vjp)


def maximum(a, b):
    """Elementwise max; the gradient is zero on the losing side and on ties of a vs b."""
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y, o: g * (x > y),
        lambda g, x, y, o: g * (y > x),
    )


def minimum(a, b):
    return _binary(
        a,
        b,
        np.minimum,
        lambda g, x, y, o: g * (x < y),
        lambda g, x, y, o: g * (y < x),
    )


def clip(x, lo: float, hi: float):
    """Clamp with zero subgradient outside the open interval (lo, hi)."""
    return _unary(
        x,
        lambda v: np.clip(v, lo, hi),
        lambda g, v, o: g * ((v > lo) & (v < hi)),
    )


def where(cond, a, b):
    """Select with a boolean ndarray condition (no gradient through cond)."""
    c = np.asarray(cond)

    def fwd(x, y):
        return np.where(c, x, y)

    return _binary(
        a, b, fwd, lambda g, x, y, o: g * c, lambda g, x, y, o: g * (~c)
    )


def asum(x, axis=None, keepdims: bool = False):
    if not isinstance(x, Tensor):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(a % len(shape) for a in axes):
                g = np.expand_dims(g, ax)
        return np.broadcast_to(g, shape).copy()

    return _node(np.asarray(out), (x,), (vjp,))


def amean(x, axis=None, keepdims: bool = False):
    n = value_of(x).size if axis is None else np.prod(
        [value_of(x).shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return asum(x, axis=axis, keepdims=keepdims) / float(n)


def matmul(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.matmul(np.asarray(a), np.asarray(b))
    ta, tb = _lift(a), _lift(b)
    out = np.matmul(ta.data, tb.data)

    def vjp_a(g):
        ga = np.matmul(g, np.swapaxes(tb.data, -1, -2))
        return _unbroadcast(ga, ta.data.shape)

    def vjp_b(g):
        gb = np.matmul(np.swapaxes(ta.data, -1, -2), g)
        return _unbroadcast(gb, tb.data.shape)

    return _node(out, (ta, tb), (vjp_a, vjp_b))


def softmax(x, axis: int = -1):
    def fwd(v):
        m = np.max(v, axis=axis, keepdims=True)
        e = np.exp(v - m)
        return e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g, v, o):
        return o * (g - np.sum(g * o, axis=axis, keepdims=True))

    return _unary(x, fwd, vjp)


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    orig = x.data.shape
    return _node(x.data.reshape(shape), (x,), (lambda g: g.reshape(orig),))


def transpose(x, axes=None):
    if not isinstance(x, Tensor):
        return np.transpose(x, axes)
    if axes is None:
        axes = tuple(reversed(range(x.data.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), (lambda g: np.transpose(g, inv),))


def take(x, idx):
    """Basic slicing only: the backward scatter is a plain assignment."""
    if not isinstance(x, Tensor):
        return np.asarray(x)[idx]
    out = x.data[idx]
    shape = x.data.shape

    def vjp(g):
        z = np.zeros(shape, dtype=np.float64)
        z[idx] = g
        return z

    return _node(out, (x,), (vjp,))


def concatenate(parts: Sequence, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate([np.asarray(p) for p in parts], axis=axis)
    ts = [_lift(p) for p in parts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            return g[tuple(sl)]

        return vjp

    return _node(out, tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


def stack(parts: Sequence, axis: int = 0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.stack([np.asarray(p) for p in parts], axis=axis)
    ts = [_lift(p) for p in parts]
    out = np.stack([t.data for t in ts], axis=axis)

    def make_vjp(i):
        def vjp(g):
            return np.take(g, i, axis=axis)

        return vjp

    return _node(out, tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar Tensor with respect to the given leaves.

    Pure function of the graph: does not mutate any state, so repeated
    calls (e.g. separate backward passes per loss term) cannot interact.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    # iterative DFS; deep graphs exceed the recursion limit
    visiting: list[tuple[Tensor, int]] = [(loss, 0)]
    seen.add(id(loss))
    while visiting:
        node, pi = visiting.pop()
        parents = node._parents
        advanced = False
        while pi < len(parents):
            p = parents[pi]
            pi += 1
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                visiting.append((node, pi))
                visiting.append((p, 0))
                advanced = True
                break
        if not advanced and pi >= len(parents):
            topo.append(node)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    out = []
    for leaf in wrt:
        g = grads.get(id(leaf))
        out.append(np.zeros_like(leaf.data) if g is None else g)
    return out
