"""Reverse-mode autodiff over float64 numpy arrays.

A ``Tensor`` is one node of a define-by-run tape: forward values are plain
ndarrays, and each differentiable op attaches a backward closure. The tape
is replayable because every op is a pure function of its inputs; gradients
are deterministic because accumulation order follows the recorded graph.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import InputError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; implementations live in the module-level functions below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_slice(self, index)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad = t.grad + g


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _node(data, parents, backward) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def backward(root: Tensor, free_graph: bool = True):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable tensor.

    ``root`` must be scalar. The graph is released afterwards unless
    ``free_graph=False`` (needed when calling backward twice).
    """
    if root.data.size != 1:
        raise InputError("backward expects a scalar root")
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        if free_graph and node is not root:
            node._parents = ()
            node._backward = None
    if free_graph:
        root._parents = ()
        root._backward = None


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.shape))

    return _node(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out_data / b.data, b.shape))

    return _node(out_data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0))

    return _node(out_data, (a,), bwd)


def softplus(a) -> Tensor:
    """log(1 + e^x), computed stably for large |x|."""
    a = as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)

    def bwd(g):
        _accum(a, g / (1.0 + np.exp(-a.data)))

    return _node(out_data, (a,), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, 2.0 * g * a.data)

    return _node(a.data * a.data, (a,), bwd)


def abs_(a) -> Tensor:
    """|x|; subgradient 0 at x = 0."""
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * np.sign(a.data))

    return _node(np.abs(a.data), (a,), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = np.asarray(g)
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.shape))

    return _node(out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        gg = np.asarray(g) / count
        if not keepdims and axis is not None:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.shape))

    return _node(out_data, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape

    def bwd(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), bwd)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                _accum(t, p)

    return _node(out_data, tuple(tensors), bwd)


def take_slice(a, index) -> Tensor:
    a = as_tensor(a)
    out_data = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _node(out_data, (a,), bwd)


def gather_rows(src, idx) -> Tensor:
    """out[b, ..., :] = src[b, idx[b, ...], :].

    src: (B, N, D); idx: int64 (B, ...); output (B, ..., D). Backward
    scatter-adds through the kernels backend.
    """
    src = as_tensor(src)
    b, n, d = src.shape
    bid = np.arange(b).reshape((b,) + (1,) * (idx.ndim - 1))
    out_data = src.data[bid, idx]
    flat_idx = (bid * n + idx).reshape(-1).astype(np.int64)

    def bwd(g):
        acc = np.zeros((b * n, d))
        kernels.scatter_add_rows(acc, flat_idx, np.ascontiguousarray(g.reshape(-1, d)))
        _accum(src, acc.reshape(b, n, d))

    return _node(out_data, (src,), bwd)


# ---------------------------------------------------------------------------
# fused neural-net ops

def masked_softmax(scores, mask=None) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` (uint8/bool).

    ``mask`` broadcasts against ``scores``; None means all-valid. Rows of
    valid weights sum to 1; fully-masked rows yield zeros.
    """
    scores = as_tensor(scores)
    shape = scores.shape
    k = shape[-1]
    if mask is None:
        mask_full = np.ones(shape, dtype=np.uint8)
    else:
        mask_full = np.ascontiguousarray(
            np.broadcast_to(mask, shape)).astype(np.uint8)
    flat = np.ascontiguousarray(scores.data.reshape(-1, k))
    probs = kernels.masked_softmax_fwd(flat, mask_full.reshape(-1, k))
    out_data = probs.reshape(shape)

    def bwd(g):
        gs = kernels.masked_softmax_bwd(probs, np.ascontiguousarray(g.reshape(-1, k)))
        _accum(scores, gs.reshape(shape))

    return _node(out_data, (scores,), bwd)


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), bwd)


def masked_max_pool(x, mask):
    """Per-channel max over axis -2 restricted to valid entries.

    x: (..., n, d); mask: (..., n) bool/uint8. Returns (pooled (..., d),
    any_valid (...,) bool ndarray); empty groups pool to zeros with
    any_valid False.
    """
    x = as_tensor(x)
    *lead, n, d = x.shape
    g_count = int(np.prod(lead)) if lead else 1
    flat_x = np.ascontiguousarray(x.data.reshape(g_count, n, d))
    flat_m = np.ascontiguousarray(
        np.broadcast_to(mask, tuple(lead) + (n,)).reshape(g_count, n)).astype(np.uint8)
    out, argmax, any_valid = kernels.masked_max_pool_fwd(flat_x, flat_m)
    out_data = out.reshape(tuple(lead) + (d,))

    def bwd(g):
        gx = kernels.masked_max_pool_bwd(
            np.ascontiguousarray(g.reshape(g_count, d)), argmax, any_valid, n)
        _accum(x, gx.reshape(x.shape))

    node = _node(out_data, (x,), bwd)
    return node, any_valid.reshape(tuple(lead)).astype(bool)


def layer_norm(x, gain, bias, eps=1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.shape))
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.shape))
        if x.requires_grad:
            gx_hat = g * gain.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx_hat - m1 - xhat * m2))

    return _node(out_data, (x, gain, bias), bwd)
