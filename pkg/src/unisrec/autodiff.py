"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps a float32 (or float64, for verification runs) ndarray and
records enough of the computation graph to run a single reverse sweep.
Leaf tensors created with `requires_grad=True` accumulate gradients into
`.grad` additively across backward calls until `zero_grad()`.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NumericFailureError

_GRAD_ENABLED = [True]
_DEFAULT_DTYPE = [np.dtype(np.float32)]


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


@contextmanager
def default_dtype(dtype):
    """Dtype given to Python-scalar constants (float64 in verification runs,
    where a float32-rounded constant would cap achievable precision)."""
    _DEFAULT_DTYPE.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


def _coerce(data):
    if isinstance(data, (int, float)) and not isinstance(data, np.generic):
        return np.asarray(data, dtype=_DEFAULT_DTYPE[-1])  # scalars never upcast the graph
    arr = np.asarray(data)
    if arr.dtype in (np.float32, np.float64):
        return arr  # float64 only appears in verification runs
    return arr.astype(np.float32)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _vjp=None):
        self.data = _coerce(data)
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    # -- leaf helpers -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"

    # -- operators ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data, name) -> Tensor:
    """Named leaf parameter with an allocated gradient buffer."""
    t = Tensor(data, requires_grad=True, name=name)
    t.zero_grad()
    return t


def _make(data, parents, vjp, name=None):
    parents = tuple(parents)
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, name=name, _parents=parents, _vjp=vjp)
    return Tensor(data, name=name)


# -- primitives --------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), vjp, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(out, (a, b), vjp, "matmul")


def power(a, p):
    a = as_tensor(a)
    out = a.data ** p

    def vjp(g):
        return (_unbroadcast(g * p * a.data ** (p - 1), a.data.shape),)

    return _make(out, (a,), vjp, f"power({p})")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp, "exp")


def log(a):
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)  # non-finite values surface as NumericFailureError

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp, "log")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.data.dtype)

    def vjp(g):
        return (g * mask,)

    return _make(out, (a,), vjp, "relu")


def softplus(a):
    """Elementwise log(1 + exp(x)), stable for large |x|."""
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype)
    sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60, 60)))

    def vjp(g):
        return (g * sig,)

    return _make(out, (a,), vjp, "softplus")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return _make(out, (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), vjp, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, (a,), vjp, "transpose")


def gather_rows(a, idx):
    """Row lookup a[idx] along axis 0; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), vjp, "gather_rows")


def take_positions(a, pos_idx):
    """For a (B, n, d) tensor, pick one position per batch row -> (B, d)."""
    a = as_tensor(a)
    pos_idx = np.asarray(pos_idx)
    batch_idx = np.arange(a.data.shape[0])
    out = a.data[batch_idx, pos_idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (batch_idx, pos_idx), g)
        return (ga,)

    return _make(out, (a,), vjp, "take_positions")


# -- composites --------------------------------------------------------


def softmax(a, axis=-1):
    """Softmax along `axis`, computed with max-subtraction."""
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)  # constant: softmax shift-invariant
    e = exp(add(a, -shift))
    return e / tsum(e, axis=axis, keepdims=True)


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    lse = log(tsum(exp(add(a, -shift)), axis=axis, keepdims=True)) + shift
    if not keepdims:
        lse = reshape(lse, tuple(d for i, d in enumerate(lse.shape) if i != (axis % len(lse.shape))))
    return lse


def l2_normalize_rows(a, eps=1e-12):
    """Normalize along the last axis to unit Euclidean norm."""
    a = as_tensor(a)
    sq = tsum(mul(a, a), axis=-1, keepdims=True)
    return mul(a, power(add(sq, eps), -0.5))


def layer_norm(a, gain, bias, eps=1e-8):
    """Standard layer normalization over the last axis."""
    mu = tmean(a, axis=-1, keepdims=True)
    centered = a - mu
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    normed = mul(centered, power(add(var, eps), -0.5))
    return add(mul(normed, gain), bias)


def dropout(a, p, gen, train):
    """Inverted dropout; the mask is drawn from `gen` only when training."""
    if not train or p <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    keep = (gen.random(a.data.shape) >= p).astype(a.data.dtype)
    return mul(a, keep / (1.0 - p))


# -- reverse sweep -----------------------------------------------------


def backward(loss: Tensor):
    """Reverse sweep from a scalar loss; accumulates into leaf `.grad`."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    if not np.isfinite(loss.data).all():
        raise NumericFailureError(loss.name or "loss")

    # Iterative topological sort (graphs are deep enough to avoid recursion).
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    adj = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if np.isnan(g).any():
            raise NumericFailureError(node.name or "unnamed")
        if node._vjp is not None:
            grads = node._vjp(g)
            for parent, pg in zip(node._parents, grads):
                if not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    if parent.grad is None or parent.grad.dtype != pg.dtype:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad = parent.grad + pg.astype(parent.data.dtype)
                    if np.isnan(parent.grad).any():
                        raise NumericFailureError(parent.name or "leaf")
                else:
                    key = id(parent)
                    if key in adj:
                        adj[key] = adj[key] + pg
                    else:
                        adj[key] = pg
        elif node.is_leaf and node.requires_grad:
            if node.grad is None or node.grad.dtype != g.dtype:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g.astype(node.data.dtype)
