"""Dense-tensor reverse-mode automatic differentiation.

A Tensor wraps a float64 numpy array (up to 3 axes) and remembers how it
was produced; calling backward() on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every tensor
that requires them. Ops never mutate their inputs, and the tape built by
one forward pass is released after backward() so separate passes cannot
interact.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    ClassOutOfRangeError,
    IndexOutOfBoundsError,
    KernelTooLargeError,
    NotScalarError,
    ShapeMismatchError,
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ShapeMismatchError(f"tensors support at most 3 axes, got {self.data.ndim}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[], None] | None = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def backward(self) -> None:
        """Populate .grad for every reachable requires_grad tensor.

        The loss must be a scalar. The tape is cleared afterwards so the
        graph cannot be reused.
        """
        if self.data.size != 1:
            raise NotScalarError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()
        for node in topo:
            node._backward = None
            node._prev = ()

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None] | None) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"cannot add shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = _make(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a: Tensor) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise ShapeMismatchError("transpose expects a 2-D tensor")
    out = _make(a.data.T.copy(), (a,), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.T)

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ShapeMismatchError("concat of an empty sequence")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatchError("concat shapes incompatible")
    out = _make(data, ts, None)
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, start, stop in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * data.ndim
                sl[axis] = slice(start, stop)
                t._accumulate(out.grad[tuple(sl)])

    out._backward = backward if out.requires_grad else None
    return out


def row_gather(a: Tensor, indices) -> Tensor:
    """out[i] = a[indices[i]] along the first axis."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise IndexOutOfBoundsError("row_gather expects 1-D indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexOutOfBoundsError(f"gather index outside [0, {a.shape[0]})")
    out = _make(a.data[idx], (a,), None)

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def segment_mean(values: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Mean of value rows per segment; empty segments yield zero rows."""
    values = _lift(values)
    if values.data.ndim != 2:
        raise ShapeMismatchError("segment_mean expects 2-D values")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (values.shape[0],):
        raise ShapeMismatchError("segment_ids must have one entry per value row")
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IndexOutOfBoundsError(f"segment id outside [0, {n_segments})")
    counts = np.bincount(ids, minlength=n_segments).astype(np.float64)
    sums = np.zeros((n_segments, values.shape[1]))
    np.add.at(sums, ids, values.data)
    denom = np.maximum(counts, 1.0)[:, None]
    out = _make(sums / denom, (values,), None)

    def backward():
        if values.requires_grad:
            values._accumulate(out.grad[ids] / denom[ids])

    out._backward = backward if out.requires_grad else None
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _lift(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = _make(s, (a,), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * s * (1.0 - s))

    out._backward = backward if out.requires_grad else None
    return out


def tanh(a: Tensor) -> Tensor:
    a = _lift(a)
    t = np.tanh(a.data)
    out = _make(t, (a,), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - t * t))

    out._backward = backward if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    a = _lift(a)
    out = _make(np.maximum(a.data, 0.0), (a,), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (a.data > 0))

    out._backward = backward if out.requires_grad else None
    return out


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1-p and rescale. p=0 is
    the identity and draws nothing from the rng."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    a = _lift(a)
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    out = _make(a.data * keep, (a,), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * keep)

    out._backward = backward if out.requires_grad else None
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    pred, target = _lift(pred), _lift(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = max(pred.data.size, 1)
    out = _make(np.asarray((diff * diff).sum() / n), (pred, target), None)

    def backward():
        g = out.grad * 2.0 * diff / n
        if pred.requires_grad:
            pred._accumulate(g)
        if target.requires_grad:
            target._accumulate(-g)

    out._backward = backward if out.requires_grad else None
    return out


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on logits, computed in the stable form
    max(x,0) - x*z + log(1 + exp(-|x|))."""
    logits, targets = _lift(logits), _lift(targets)
    if logits.shape != targets.shape:
        raise ShapeMismatchError("bce shapes differ")
    x, z = logits.data, targets.data
    loss = np.maximum(x, 0.0) - x * z + np.log1p(np.exp(-np.abs(x)))
    n = max(x.size, 1)
    out = _make(np.asarray(loss.sum() / n), (logits, targets), None)

    def backward():
        if logits.requires_grad:
            s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
            logits._accumulate(out.grad * (s - z) / n)
        if targets.requires_grad:
            targets._accumulate(out.grad * (-x) / n)

    out._backward = backward if out.requires_grad else None
    return out


def softmax_cross_entropy(logits: Tensor, class_ids) -> Tensor:
    """Mean negative log-softmax of the target class per row."""
    logits = _lift(logits)
    if logits.data.ndim != 2:
        raise ShapeMismatchError("softmax_cross_entropy expects 2-D logits")
    ids = np.asarray(class_ids, dtype=np.int64)
    n, c = logits.shape
    if ids.shape != (n,):
        raise ShapeMismatchError("one class id per logit row required")
    if ids.size and (ids.min() < 0 or ids.max() >= c):
        raise ClassOutOfRangeError(f"class id outside [0, {c})")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    exps = np.exp(x - m)
    logz = np.log(exps.sum(axis=1, keepdims=True)) + m
    logp = x - logz
    out = _make(np.asarray(-logp[np.arange(n), ids].sum() / max(n, 1)), (logits,), None)

    def backward():
        if logits.requires_grad:
            soft = exps / exps.sum(axis=1, keepdims=True)
            soft[np.arange(n), ids] -= 1.0
            logits._accumulate(out.grad * soft / max(n, 1))

    out._backward = backward if out.requires_grad else None
    return out


def _moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """Row-stochastic matrix applying an edge-replicated moving average."""
    half = kernel // 2
    m = np.zeros((length, length))
    rows = np.arange(length)
    for offset in range(-half, half + 1):
        cols = np.clip(rows + offset, 0, length - 1)
        np.add.at(m, (rows, cols), 1.0 / kernel)
    return m


def moving_average(seq: Tensor, kernel: int) -> Tensor:
    """Moving average along the first axis with edge-replicated padding.

    The kernel must be odd and no longer than the sequence.
    """
    seq = _lift(seq)
    if seq.data.ndim != 2:
        raise ShapeMismatchError("moving_average expects a 2-D sequence")
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
    if kernel > seq.shape[0]:
        raise KernelTooLargeError(f"kernel {kernel} exceeds sequence length {seq.shape[0]}")
    m = _moving_average_matrix(seq.shape[0], kernel)
    out = _make(m @ seq.data, (seq,), None)

    def backward():
        if seq.requires_grad:
            seq._accumulate(m.T @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out
