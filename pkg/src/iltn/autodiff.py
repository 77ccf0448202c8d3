"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, and
every primitive op executed while a ``Tape`` is active appends one record
(output, inputs, vjp) to that tape. ``Tape.backward`` walks the records in
reverse, accumulating vector-Jacobian products. Nested tapes are allowed;
an op records only on the innermost active tape, which is what lets an
inner optimization loop compute gradients without entangling the outer
graph.

Subgradient convention at kinks (relu / clamp / max): the boundary point
counts as active, i.e. derivative 1 flows through an exact tie.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_EPS_TIE = 0.0  # ties handled with >= comparisons, no tolerance

_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array node in a computation graph."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars and arrays are promoted to constant Tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops; consumed by one backward pass.

    Usable as a context manager. Ops executed while this tape is the
    innermost active one are recorded in execution order, which is a
    topological order of the graph by construction.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not innermost")
        stack.pop()

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate gradients of a scalar ``root`` back to the leaves.

        Returns a map from each leaf Tensor with ``requires_grad`` to its
        gradient array. The tape is cleared afterwards so the same Tape
        object can record a fresh forward pass.
        """
        if root.size != 1:
            raise ValueError(f"backward root must be a scalar, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        produced = {id(out) for out, _, _ in self._records}
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for out, inputs, vjp in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue  # not on a path to the root
            for inp, piece in zip(inputs, vjp(g)):
                if piece is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + piece
                else:
                    grads[key] = piece
                if inp.requires_grad and key not in produced:
                    leaf_grads[inp] = grads[key]
        if root.requires_grad and id(root) not in produced:
            leaf_grads[root] = np.ones_like(root.data)
        self._records.clear()
        return leaf_grads


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        tape._record(out, inputs, vjp)
    return out


# ----- elementwise arithmetic -----

def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit(ad * bd, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _emit(ad / bd, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _emit(ad @ bd, (a, b), vjp)


# ----- elementwise nonlinearities -----

def relu(a: Tensor) -> Tensor:
    mask = a.data >= _EPS_TIE  # tie at 0 counts as active

    def vjp(g):
        return (g * mask,)

    return _emit(np.maximum(a.data, 0.0), (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _emit(t, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _emit(s, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def vjp(g):
        return (g * e,)

    return _emit(e, (a,), vjp)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _emit(np.log(ad), (a,), vjp)


def powc(a: Tensor, p: float) -> Tensor:
    """x**p for a nonnegative tensor and a constant exponent.

    At x == 0 the derivative is defined as 0 unless p == 1; for p < 1 the
    true one-sided derivative is infinite, and 0 is the subgradient that
    keeps losses flat at their global minimum.
    """
    ad = a.data
    out = np.power(ad, p)

    def vjp(g):
        if p == 1.0:
            return (g.copy(),)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(ad, p - 1.0)
        d = np.where(ad == 0.0, 0.0, d)
        return (g * d,)

    return _emit(out, (a,), vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    take_a = ad >= bd

    def vjp(g):
        return (_unbroadcast(g * take_a, ad.shape),
                _unbroadcast(g * ~take_a, bd.shape))

    return _emit(np.maximum(ad, bd), (a, b), vjp)


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = np.ones_like(ad, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi

    def vjp(g):
        return (g * inside,)

    return _emit(out, (a,), vjp)


# ----- reductions -----

def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    shape = a.data.shape

    def vjp(g):
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    shape = a.data.shape
    count = 1
    for ax in axes:
        count *= shape[ax]

    def vjp(g):
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _emit(a.data.mean(axis=axes, keepdims=keepdims), (a,), vjp)


def tmax(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max reduction. Gradient flows to the first maximal element only."""
    ad = a.data
    ax = axis % ad.ndim
    out = ad.max(axis=ax, keepdims=keepdims)
    arg = ad.argmax(axis=ax)  # first occurrence: deterministic at ties
    onehot = np.zeros_like(ad)
    np.put_along_axis(onehot, np.expand_dims(arg, ax), 1.0, axis=ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (onehot * g,)

    return _emit(out, (a,), vjp)


# ----- softmax family -----

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    shifted = ad - ad.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _emit(s, (a,), vjp)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    e = np.exp(ad - m)
    se = e.sum(axis=axis, keepdims=True)
    out = m + np.log(se)
    soft = e / se
    ax = axis % ad.ndim
    if not keepdims:
        out = out.squeeze(ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (soft * g,)

    return _emit(out, (a,), vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    shifted = ad - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (a,), vjp)


# ----- structural ops -----

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _emit(a.data.reshape(tuple(shape)), (a,), vjp)


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    ad = a.data
    ax = axis % ad.ndim

    def vjp(g):
        out = np.zeros_like(ad)
        moved = np.moveaxis(out, ax, 0)
        np.add.at(moved, idx, np.moveaxis(g, ax, 0))
        return (out,)

    return _emit(np.take(ad, idx, axis=ax), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    datas = [t.data for t in ts]
    ax = axis % datas[0].ndim
    sizes = [d.shape[ax] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return _emit(np.concatenate(datas, axis=ax), tuple(ts), vjp)


def one_hot(indices, depth: int) -> Tensor:
    """Constant one-hot encoding along a trailing axis."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.zeros(idx.shape + (depth,), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return Tensor(out)
