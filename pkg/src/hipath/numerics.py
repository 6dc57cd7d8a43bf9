"""Dense float64 tensors with reverse-mode automatic differentiation.

Every model equation runs on these primitives.  Operations execute eagerly
on numpy arrays and, when any input requires a gradient, append a backward
rule to the active Tape.  ``backward(loss)`` replays the tape in reverse,
accumulating vector-Jacobian products into ``.grad`` buffers.

Shapes are explicit; the only broadcast allowed is adding a bias vector to
the rows of a matrix.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations and their backward rules.

    Records are appended in execution order, which is a topological order
    of the computation graph; the backward pass walks them once, in
    reverse.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))

    def clear(self) -> None:
        self._records.clear()

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state().stack.pop()

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every tensor the loss depends on.

        Gradients accumulate across multiple uses of the same tensor and
        across repeated backward calls; callers zero grads between steps.
        """
        if loss.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        if not self._records:
            raise NonScalarLoss("tape is empty; nothing to differentiate")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, inputs, vjp in reversed(self._records):
            if out.grad is None:
                continue
            grads = vjp(out.grad)
            for t, g in zip(inputs, grads):
                if g is not None and t.requires_grad:
                    t.accumulate_grad(g)


class _State(threading.local):
    def __init__(self):
        self.stack: list[Tape] = [Tape()]
        self.grad_enabled = True


_STATE = _State()


def _state() -> _State:
    return _STATE


def active_tape() -> Tape:
    return _state().stack[-1]


class no_grad:
    """Context manager that suspends tape recording (inference mode)."""

    def __enter__(self):
        st = _state()
        self._prev = st.grad_enabled
        st.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state().grad_enabled = self._prev


def backward(loss: Tensor) -> None:
    """Reverse-mode pass over the active tape from a scalar loss."""
    active_tape().backward(loss)


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if _state().grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        active_tape().record(out, inputs, vjp)
    return out


def _require_shape(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(
        a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0],
        f"matmul needs (n,k)@(k,m), got {a.shape} @ {b.shape}",
    )
    out = Tensor(a.data @ b.data)

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; a vector may be added to each row of a matrix."""
    bias = a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]
    _require_shape(a.shape == b.shape or bias, f"add shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)

    def vjp(g):
        return g, g.sum(axis=0) if bias else g

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(a.shape == b.shape, f"mul shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)

    def vjp(g):
        return g * b.data, g * a.data

    return _record(out, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    _require_shape(len(tensors) > 0, "concat needs at least one tensor")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        other[axis] = base[axis]
        _require_shape(other == base, f"concat shapes {tensors[0].shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), vjp)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    _require_shape(
        0 <= start < stop <= t.shape[axis],
        f"slice [{start}:{stop}] out of range for axis {axis} of {t.shape}",
    )
    index = [np.s_[:]] * t.data.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    out = Tensor(t.data[index].copy())

    def vjp(g):
        full = np.zeros_like(t.data)
        full[index] = g
        return (full,)

    return _record(out, (t,), vjp)


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    idx = np.asarray(ids, dtype=np.int64)
    _require_shape(table.data.ndim == 2, f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(f"id out of range [0, {table.shape[0]}) in lookup")
    out = Tensor(table.data[idx])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), vjp)


def mean_pool(t: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = Tensor(t.data.mean(axis=axis, keepdims=keepdims))
    n = t.shape[axis]

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape) / n,)

    return _record(out, (t,), vjp)


def sum_all(t: Tensor) -> Tensor:
    out = Tensor(t.data.sum())
    return _record(out, (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(t.data.reshape(shape))
    return _record(out, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor) -> Tensor:
    _require_shape(t.data.ndim == 2, f"transpose expects a matrix, got {t.shape}")
    out = Tensor(t.data.T.copy())
    return _record(out, (t,), lambda g: (g.T,))


def relu(t: Tensor) -> Tensor:
    out = Tensor(np.maximum(t.data, 0.0))
    mask = t.data > 0

    def vjp(g):
        return (g * mask,)

    return _record(out, (t,), vjp)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _record(out, (t,), vjp)


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.data))

    def vjp(g):
        return (g / t.data,)

    return _record(out, (t,), vjp)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only where the input was inside [lo, hi]."""
    out = Tensor(np.clip(t.data, lo, hi))
    inside = (t.data >= lo) & (t.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _record(out, (t,), vjp)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (t,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    dim = x.shape[-1]
    _require_shape(
        gamma.shape == (dim,) and beta.shape == (dim,),
        f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs feature dim {dim}",
    )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out = Tensor(y * gamma.data + beta.data)

    def vjp(g):
        dy = g * gamma.data
        # d/dx of (x - mu) * inv with mu, var functions of x
        gx = inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * y).sum(axis=axes), g.sum(axis=axes)

    return _record(out, (x, gamma, beta), vjp)


def dropout(t: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not train or rate == 0.0:
        return t
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(t.shape) >= rate) / (1.0 - rate)
    out = Tensor(t.data * keep)

    def vjp(g):
        return (g * keep,)

    return _record(out, (t,), vjp)


def masked_fill(t: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set positions where ``mask`` is True to ``value``; their grad is zero."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), t.shape)
    out = Tensor(np.where(mask, value, t.data))

    def vjp(g):
        return (np.where(mask, 0.0, g),)

    return _record(out, (t,), vjp)


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued and deterministic.  Relative error per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        loss = f(x)
        tape.backward(loss)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.zero_grad()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(x).item()
            flat[i] = orig - h
            down = f(x).item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)

    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
