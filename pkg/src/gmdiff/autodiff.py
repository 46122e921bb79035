"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough operations for the sequence predictors: (batched) matmul,
broadcast add/multiply, relu, reshape/transpose, mean-pooling, softmax,
layer norm and a fused softmax cross-entropy.  Graphs are built per forward
call and discarded after backward.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "param",
    "const",
    "matmul",
    "add",
    "mul",
    "relu",
    "reshape",
    "transpose",
    "mean_pool",
    "softmax",
    "layer_norm",
    "softmax_cross_entropy",
    "backward",
]


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def const(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def back():
        g = out.grad
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape))

    out.backward_fn = back
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def back():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    out.backward_fn = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, (a, b))

    def back():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out.backward_fn = back
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), (a,))
    out.backward_fn = lambda: _accumulate(a, out.grad * mask)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    out.backward_fn = lambda: _accumulate(a, out.grad.reshape(a.data.shape))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(a.data, axes), (a,))
    inv = np.argsort(axes)
    out.backward_fn = lambda: _accumulate(a, np.transpose(out.grad, inv))
    return out


def mean_pool(a: Tensor, axis: int) -> Tensor:
    """Mean over one axis, keeping it as size 1."""
    out = Tensor(a.data.mean(axis=axis, keepdims=True), (a,))
    n = a.data.shape[axis]
    out.backward_fn = lambda: _accumulate(a, np.broadcast_to(out.grad / n, a.data.shape))
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (numerically stabilized)."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s, (a,))

    def back():
        g = out.grad
        _accumulate(a, (g - (g * s).sum(axis=-1, keepdims=True)) * s)

    out.backward_fn = back
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y * gain.data + bias.data, (a, gain, bias))

    def back():
        g = out.grad
        _accumulate(gain, _unbroadcast(g * y, gain.data.shape))
        _accumulate(bias, _unbroadcast(g, bias.data.shape))
        gy = g * gain.data
        _accumulate(
            a,
            inv
            * (
                gy
                - gy.mean(axis=-1, keepdims=True)
                - y * (gy * y).mean(axis=-1, keepdims=True)
            ),
        )

    out.backward_fn = back
    return out


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Scalar sum over rows of -sum_k targets log softmax(logits).

    Targets are constant simplex rows (one-hot or soft); the gradient wrt
    logits is softmax(logits) - targets.
    """
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    loss = -(targets * logp).sum()
    out = Tensor(loss, (logits,))

    def back():
        _accumulate(logits, out.grad * (np.exp(logp) - targets))

    out.backward_fn = back
    return out


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar (or any) root tensor."""
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.backward_fn is not None:
            node.backward_fn()
