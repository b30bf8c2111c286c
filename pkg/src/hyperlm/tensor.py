"""Reverse-mode autodiff over dense float64 arrays.

A thread-local Tape records every operation whose inputs require
gradients, in creation order (which is automatically topological).
``backward`` replays the tape in reverse and then clears it.  All math
is 64-bit and uses numpy's fixed reduction order, so repeated runs with
identical inputs are bit-identical.
"""

from __future__ import annotations

import threading
from typing import Iterable, Optional, Sequence

import numpy as np

_LOCAL = threading.local()


class Tape:
    """Ordered record of result tensors; parents always precede children."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def append(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._backward = None
            node._parents = ()
        self.nodes.clear()


def tape() -> Tape:
    """The calling thread's active tape."""
    t = getattr(_LOCAL, "tape", None)
    if t is None:
        t = Tape()
        _LOCAL.tape = t
    return t


class no_grad:
    """Context manager that suspends tape recording on this thread."""

    def __enter__(self):
        self.prev = getattr(_LOCAL, "grad_enabled", True)
        _LOCAL.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _LOCAL.grad_enabled = self.prev
        return False


def _recording() -> bool:
    return getattr(_LOCAL, "grad_enabled", True)


def _as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        raise TypeError("expected raw array, got Tensor")
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array with optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return abs_(self)

    def exp(self):
        return exp(self)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate grads of every recorded ancestor of this scalar loss.

        The thread's tape is cleared afterwards.
        """
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        t = tape()
        self.grad = np.ones_like(self.data)
        for node in reversed(t.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)
        t.clear()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    requires = _recording() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
        tape().append(out)
    return out


# ----------------------------------------------------------------------
# elementwise / broadcasted arithmetic
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backward)


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")
    data = a.data.T.copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(data, (a,), backward)


def broadcast_to(a, shape: tuple) -> Tensor:
    a = _wrap(a)
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))

    return _make(data, (a,), backward)


# ----------------------------------------------------------------------
# elementwise nonlinearities
# ----------------------------------------------------------------------

_SQRT_BACKWARD_FLOOR = 1e-12
_EXP_CLAMP = 700.0  # exp saturates instead of overflowing to inf


def sqrt(a) -> Tensor:
    a = _wrap(a)
    data = np.sqrt(np.maximum(a.data, 0.0))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / np.sqrt(np.maximum(a.data, _SQRT_BACKWARD_FLOOR)))

    return _make(data, (a,), backward)


def abs_(a) -> Tensor:
    a = _wrap(a)
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            # subgradient 0 at the kink
            a._accumulate(g * np.sign(a.data))

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(np.minimum(a.data, _EXP_CLAMP))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    a = _wrap(a)
    data = np.maximum(a.data, floor)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > floor))

    return _make(data, (a,), backward)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------

def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ValueError("concat of empty sequence")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]

    def backward(g):
        offsets = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])

    return _make(data, parts, backward)


def narrow(a, start: int, stop: Optional[int], axis: int = -1) -> Tensor:
    """Contiguous slice [start:stop] along one axis."""
    a = _wrap(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

    return _make(data, (a,), backward)


def gather_rows(a, ids) -> Tensor:
    """Row lookup a[ids]; backward scatter-adds into the table."""
    a = _wrap(a)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("gather_rows expects a 1-D id list")
    if ids.size and (ids.min() < 0 or ids.max() >= a.data.shape[0]):
        raise ValueError("gather_rows id out of range")
    data = a.data[ids].copy()

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, ids, g)
            a._accumulate(full)

    return _make(data, (a,), backward)


def rotate_pairs(a, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate adjacent coordinate pairs (2l, 2l+1) by fixed angles.

    `cos`/`sin` are constant arrays broadcastable to a[..., ::2].
    """
    a = _wrap(a)
    if a.data.shape[-1] % 2 != 0:
        raise ValueError("rotate_pairs needs an even trailing dimension")
    cos = np.asarray(cos, dtype=np.float64)
    sin = np.asarray(sin, dtype=np.float64)
    even, odd = a.data[..., ::2], a.data[..., 1::2]
    data = np.empty_like(a.data)
    data[..., ::2] = even * cos - odd * sin
    data[..., 1::2] = even * sin + odd * cos

    def backward(g):
        if a.requires_grad:
            ge, go = g[..., ::2], g[..., 1::2]
            out = np.empty_like(a.data)
            out[..., ::2] = ge * cos + go * sin
            out[..., 1::2] = -ge * sin + go * cos
            a._accumulate(out)

    return _make(data, (a,), backward)


def masked_softmax(scores, mask: Optional[np.ndarray]) -> Tensor:
    """Softmax over the last axis; True entries of `mask` are disallowed.

    Every row must keep at least one allowed position.
    """
    a = _wrap(scores)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ValueError("mask shape must match scores")
        if np.any(mask.all(axis=-1)):
            raise ValueError("masked_softmax row with no allowed position")
        x = np.where(mask, -np.inf, x)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    probs = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * probs).sum(axis=-1, keepdims=True)
            a._accumulate(probs * (g - inner))

    return _make(probs, (a,), backward)


def cross_entropy(logits, targets, ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-likelihood of integer targets under row softmax.

    Rows whose target equals `ignore_index` are excluded from the mean.
    """
    a = _wrap(logits)
    if a.data.ndim != 2:
        raise ValueError("cross_entropy expects (rows, classes) logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] != a.data.shape[0]:
        raise ValueError("targets must be one id per logit row")
    n_classes = a.data.shape[1]
    live = np.ones(targets.shape[0], dtype=bool)
    if ignore_index is not None:
        live = targets != ignore_index
    if not live.any():
        raise ValueError("cross_entropy with every position ignored")
    checked = targets[live]
    if checked.min() < 0 or checked.max() >= n_classes:
        raise ValueError("cross_entropy target out of range")

    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1)) + a.data.max(axis=-1)
    row_nll = logz - a.data[np.arange(targets.shape[0]), np.clip(targets, 0, n_classes - 1)]
    count = int(live.sum())
    data = np.asarray(row_nll[live].sum() / count)

    def backward(g):
        if a.requires_grad:
            probs = np.exp(a.data - logz[:, None])
            probs[np.arange(targets.shape[0]), np.clip(targets, 0, n_classes - 1)] -= 1.0
            probs[~live] = 0.0
            a._accumulate(g * probs / count)

    return _make(data, (a,), backward)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay and bias correction."""

    def __init__(self, params: Sequence[Tensor], lr: float = 2e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Apply one update to every parameter and clear its grad."""
        for p in self.params:
            if p.grad is None:
                raise ValueError("optimizer step with missing grad")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
