"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors are plain ``numpy.ndarray`` values. A :class:`Node` wraps a value and
records how it was computed so that :func:`backward` can push gradients from
a scalar root back to every leaf that has ``requires_grad=True``.

Broadcasting follows numpy's trailing-dimension alignment rule: shapes are
compared from the last axis backwards and each pair of extents must be equal
or one of them must be 1. Anything else raises :class:`DimensionError`.

Subgradient conventions: ``relu'(0) = 0``, ``sign' = 0`` everywhere,
``abs'(0) = 0`` and ``clamp`` passes the gradient only for inputs inside the
closed interval ``[lo, hi]``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32


class Node:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape}, dtype={self.value.dtype})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def parameter(value, name=None) -> Node:
    """Leaf node whose gradient is tracked."""
    return Node(np.array(value), requires_grad=True, name=name)


def constant(value, dtype=None) -> Node:
    return Node(np.asarray(value, dtype=dtype))


def as_node(x, like: Node | None = None) -> Node:
    if isinstance(x, Node):
        return x
    dtype = like.dtype if like is not None and np.ndim(x) == 0 else None
    return Node(np.asarray(x, dtype=dtype))


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"shapes {a} and {b} are not broadcast-compatible") from None


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of trailing-dimension broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b):
    if not isinstance(a, Node):
        a = as_node(a, like=b if isinstance(b, Node) else None)
    if not isinstance(b, Node):
        b = as_node(b, like=a)
    _broadcast_shape(a.shape, b.shape)
    return a, b


def add(a, b) -> Node:
    a, b = _binary(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Node(a.value + b.value, (a, b), bw)


def sub(a, b) -> Node:
    a, b = _binary(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Node(a.value - b.value, (a, b), bw)


def mul(a, b) -> Node:
    a, b = _binary(a, b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Node(a.value * b.value, (a, b), bw)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return Node(a.value @ b.value, (a, b), bw)


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def exp(x) -> Node:
    x = as_node(x)
    out = np.exp(x.value)
    return Node(out, (x,), lambda g: (g * out,))


def log(x) -> Node:
    x = as_node(x)
    if np.any(x.value <= 0):
        raise ContractError("log requires strictly positive input")
    return Node(np.log(x.value), (x,), lambda g: (g / x.value,))


def clamp(x, lo=None, hi=None) -> Node:
    x = as_node(x)
    v = x.value
    inside = np.ones(v.shape, dtype=bool)
    if lo is not None:
        inside &= v >= lo
    if hi is not None:
        inside &= v <= hi
    return Node(np.clip(v, lo, hi), (x,), lambda g: (g * inside,))


def sign(x) -> Node:
    x = as_node(x)
    return Node(np.sign(x.value), (x,), lambda g: (np.zeros_like(x.value),))


def abs(x) -> Node:  # noqa: A001 - mirrors numpy naming
    x = as_node(x)
    s = np.sign(x.value)
    return Node(np.abs(x.value), (x,), lambda g: (g * s,))


def sum(x, axis=None) -> Node:  # noqa: A001
    x = as_node(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Node(np.asarray(x.value.sum(axis=axis)), (x,), bw)


def mean(x, axis=None) -> Node:
    x = as_node(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), np.asarray(1.0 / n, dtype=x.dtype))


def reshape(x, shape) -> Node:
    x = as_node(x)
    return Node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def conv2d(x, w, b=None) -> Node:
    """Valid-padding, stride-1 2-D cross-correlation.

    x: [B, Cin, H, W]; w: [Cout, Cin, kh, kw]; b: [Cout] or None.
    """
    x, w = as_node(x), as_node(w)
    if x.value.ndim != 4 or w.value.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d shapes incompatible: x {x.shape}, w {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError("conv2d kernel larger than input")
    windows = sliding_window_view(x.value, (kh, kw), axis=(2, 3))  # B,Cin,Ho,Wo,kh,kw
    out = np.einsum("bchwij,ocij->bohw", windows, w.value, optimize=True)
    parents = [x, w]
    if b is not None:
        b = as_node(b)
        out = out + b.value[None, :, None, None]
        parents.append(b)
    ho, wo = out.shape[2], out.shape[3]

    def bw(g):
        gx = gw = None
        if x.requires_grad:
            gx = np.zeros_like(x.value)
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + ho, j:j + wo] += np.einsum("bohw,oc->bchw", g, w.value[:, :, i, j])
        if w.requires_grad:
            gw = np.einsum("bohw,bchwij->ocij", g, windows, optimize=True)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Node(out.astype(x.dtype, copy=False), parents, bw)


def log_softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels, reduction="mean") -> Node:
    """Cross-entropy of softmax(logits) against integer labels.

    ``reduction="sum"`` keeps per-example gradients independent of batch size,
    which is what the attacks want.
    """
    logits = as_node(logits)
    labels = np.asarray(labels)
    if logits.value.ndim != 2:
        raise DimensionError(f"logits must be [B, C], got {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    if reduction not in ("mean", "sum"):
        raise ContractError(f"unknown reduction {reduction!r}")
    logp = log_softmax_np(logits.value)
    rows = np.arange(n)
    per_example = -logp[rows, labels]
    scale = 1.0 / n if reduction == "mean" else 1.0
    loss = per_example.sum() * scale

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g * scale),)

    return Node(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def per_example_cross_entropy(logits, labels):
    """Non-differentiable per-row cross-entropy on raw arrays."""
    logp = log_softmax_np(np.asarray(logits))
    return -logp[np.arange(len(labels)), labels]


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``root``.

    Gradients are reset on each call rather than accumulated.
    """
    if not isinstance(root, Node):
        raise ContractError("backward expects a Node")
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=parent.value.dtype).reshape(parent.shape)
            parent.grad = g if parent.grad is None else parent.grad + g


def grad(fn, x):
    """Gradient of scalar ``fn(Node)`` at array ``x``; convenience for tests and attacks."""
    xn = Node(np.array(x), requires_grad=True)
    out = fn(xn)
    backward(out)
    return out.value, (xn.grad if xn.grad is not None else np.zeros_like(xn.value))
