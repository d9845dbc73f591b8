"""Reverse-mode autodiff over float64 numpy arrays.

Ops build an implicit DAG of Tensor nodes; backward() walks it once in
reverse topological order and accumulates exact analytic gradients into every
requires_grad leaf. The operator set is exactly what the model and losses
need, all double precision, nothing in place.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True
_debug_finite = False


class no_grad:
    """Context manager: ops inside build no graph (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def set_debug_checks(flag: bool) -> None:
    """When on, every op asserts its output is finite (NaN/Inf guard)."""
    global _debug_finite
    _debug_finite = flag


class GradError(ValueError):
    """Shape mismatch, bad axis, or non-scalar backward root."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite_check(arr):
    if _debug_finite and not np.all(np.isfinite(arr)):
        raise GradError("non-finite value produced by an op (debug check)")


def _make(data, parents, backward_fn) -> Tensor:
    _finite_check(data)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(parent: Tensor, contribution: np.ndarray):
    if parent.requires_grad:
        parent.grad = contribution if parent.grad is None else parent.grad + contribution


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- primitive ops -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    data = a.data * s

    def backward(g):
        _accumulate(a, g * s)

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise GradError("matmul requires tensors of rank >= 2")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(data, (a, b), backward)


def linear(x, w, b) -> Tensor:
    """Fused x @ w + b (bias broadcast over leading axes)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim < 2 or w.ndim != 2:
        raise GradError("linear requires x rank >= 2 and 2-D w")
    data = x.data @ w.data + b.data

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        if w.requires_grad:
            if x.ndim == 2:
                _accumulate(w, x.data.T @ g)
            else:
                d_in, d_out = w.data.shape
                _accumulate(w, x.data.reshape(-1, d_in).T @ g.reshape(-1, d_out))
        if b.requires_grad:
            _accumulate(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _make(data, (x, w, b), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    return _make(data, tuple(tensors), backward)


def slice_(a, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accumulate(a, full)

    return _make(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = a.data.transpose(axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), backward)


def embedding_lookup(table, ids) -> Tensor:
    """Rows of `table` selected by integer array `ids`; output ids.shape + (dim,)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise GradError("embedding table must be 2-D")
    data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        _accumulate(table, full)

    return _make(data, (table,), backward)


def gather_last(a, idx) -> Tensor:
    """out[..., i] = a[..., i, idx[..., i]]: pick one entry along the last axis."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.data.shape[:-1]:
        raise GradError(f"index shape {idx.shape} must match {a.data.shape[:-1]}")
    data = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        _accumulate(a, full)

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward)


def pow_const(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        if p == 0.0:
            _accumulate(a, np.zeros_like(a.data))
        else:
            _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(data, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input is strictly inside."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def backward(g):
        _accumulate(a, g * ((a.data > lo) & (a.data < hi)))

    return _make(data, (a,), backward)


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where mask is True with `value` (no gradient there)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    data = np.where(mask, value, a.data)
    out = Tensor(data)
    if _grad_enabled and a.requires_grad:
        out.requires_grad = True
        out._parents = (a,)

        def backward(g):
            _accumulate(a, np.where(mask, 0.0, g))

        out._backward = backward
    return out


def _normalize_axis(axis, ndim):
    if axis is None:
        return None
    axis = int(axis)
    if not -ndim <= axis < ndim:
        raise GradError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _make(data, (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    data = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.data.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape))

    return _make(data, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _make(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axis(axis, a.ndim)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def backward(g):
        _accumulate(a, g - probs * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data
    n = x.data.shape[-1]

    def backward(g):
        if gain.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(gain, (g * xhat).sum(axis=axes))
        if bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            _accumulate(bias, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gain.data
            term1 = dxhat.sum(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv_std / n * (n * dxhat - term1 - xhat * term2))

    return _make(data, (x, gain, bias), backward)


# -- graph walk ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    Repeated calls without zero_grad accumulate. The loss must be scalar.
    """
    if loss.data.size != 1:
        raise GradError(f"backward root must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    # Interior nodes are scratch space: reset them so leaves accumulate exactly.
    for node in order:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
