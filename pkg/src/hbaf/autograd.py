"""Reverse-mode automatic differentiation over numpy arrays.

A dynamically built DAG of :class:`Tensor` nodes, sized for dialogue-scale
models: every operation records a closure that scatters the output gradient
back onto its parents, and :func:`backward` replays those closures in reverse
topological order.  All arithmetic stays in the dtype of the operands
(float64 by default), which is what makes the finite-difference checks in the
test suite meaningful.

Only the operations the fusion architecture needs are implemented; there is
no broadcasting beyond numpy's own, and no in-place mutation of graph nodes.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A node in the computation graph wrapping an ndarray.

    ``grad`` is filled by :func:`backward` and has the same shape as ``data``.
    Tensors are cheap value holders; model parameters are Tensors registered
    in a :class:`~hbaf.params.ParameterStore`.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        if _GRAD_ENABLED:
            self._parents = _parents
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS postorder; recursion would overflow on long recurrences.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
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


def backward(root: Tensor, seed=None) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for the whole graph.

    ``root`` is usually a scalar loss; pass ``seed`` to start from a
    non-unit output gradient.
    """
    order = _topo_order(root)
    root.grad = (
        np.ones_like(root.data) if seed is None else np.broadcast_to(np.asarray(seed, dtype=root.data.dtype), root.data.shape).copy()
    )
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    out_data = A @ B

    def bw(g):
        if A.ndim == 1 and B.ndim == 2:  # (k,) @ (k,m) -> (m,)
            _accum(a, g @ B.T)
            _accum(b, np.outer(A, g))
        elif A.ndim == 2 and B.ndim == 1:  # (n,k) @ (k,) -> (n,)
            _accum(a, np.outer(g, B))
            _accum(b, A.T @ g)
        else:
            _accum(a, g @ B.swapaxes(-1, -2))
            _accum(b, A.swapaxes(-1, -2) @ g)

    return Tensor(out_data, (a, b), bw)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data**p

    def bw(g):
        _accum(a, g * p * a.data ** (p - 1))

    return Tensor(out_data, (a,), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return Tensor(out_data, (a,), bw)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return Tensor(out_data, (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # Stable in both tails.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, (a,), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0))

    return Tensor(out_data, (a,), bw)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1) -> Tensor:
    """Rowwise softmax, shift-stabilised; gradient is exact."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - inner))

    return Tensor(out_data, (a,), bw)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    """log(sum(exp(x))) along ``axis``; overflow-free for large |x|."""
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.log(s) + m
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def bw(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, gg * (e / s))

    return Tensor(out_data, (a,), bw)


def concat(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor(out_data, tuple(tensors), bw)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D matrix."""
    return concat([reshape(t, (1, -1)) for t in tensors], axis=0)


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data[idx]

    def bw(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g  # basic (non-fancy) indexing only
        _accum(a, buf)

    return Tensor(out_data, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return Tensor(out_data, (a,), bw)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.T

    def bw(g):
        _accum(a, g.T)

    return Tensor(out_data, (a,), bw)


# ---------------------------------------------------------------------------
# composite building blocks shared across the architecture
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b)."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


def layer_norm(x: Tensor, scale: Tensor, offset: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise each row to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = add(x, mul(mu, -1.0))
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), scale), offset)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, collect: list | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over full (non-causal) rows.

    If ``collect`` is given, the attention probability matrix (ndarray) is
    appended to it for inspection.
    """
    d = q.data.shape[-1]
    logits = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(d))
    weights = softmax(logits, axis=-1)
    if collect is not None:
        collect.append(weights.data.copy())
    return matmul(weights, v)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when p == 0 or rng is None."""
    if p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, Tensor(mask))
