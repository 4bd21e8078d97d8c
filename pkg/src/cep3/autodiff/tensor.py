"""Dense tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded in order;
:func:`backward` replays the record in reverse.  Outside a tape nothing is
recorded, which is the cheap path used for inference.
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tensor:
    """A numpy array plus the bookkeeping needed for differentiation."""

    __slots__ = ("value", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes are thread-local so separate threads can
    each run their own tape over shared parameters.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable) -> None:
        self.records.append((out, inputs, rule))


class no_grad:
    """Suspend recording on this thread (ops inside are treated as constants)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _finish(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    # a non-finite entry makes the sum non-finite
    if not math.isfinite(value.sum()):
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite output from {op}")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(out, inputs, rule)
    return out


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse pass over ``tape`` seeded at the scalar ``loss``.

    Returns a map from every tensor reached to its gradient.  Tensors that
    never influenced ``loss`` are absent; callers treat that as zero.
    """
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.value)}
    for out, inputs, rule in reversed(tape.records):
        g = grads.pop(out, None) if out is not loss else grads.get(out)
        if g is None:
            continue
        in_grads = rule(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t in grads:
                grads[t] = grads[t] + gi
            else:
                grads[t] = gi
    return grads


# ---------------------------------------------------------------------------
# helpers


def _unbias(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` (bias-add and scalars)."""
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead > 0 else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_bias(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return
    raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    _check_bias(a.value, b.value, "add")
    sa, sb = a.shape, b.shape
    return _finish("add", a.value + b.value, (a, b),
                   lambda g: (_unbias(g, sa), _unbias(g, sb)))


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    _check_bias(a.value, b.value, "sub")
    sa, sb = a.shape, b.shape
    return _finish("sub", a.value - b.value, (a, b),
                   lambda g: (_unbias(g, sa), -_unbias(g, sb)))


def neg(a) -> Tensor:
    a = const(a)
    return _finish("neg", -a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    _check_bias(a.value, b.value, "mul")
    av, bv = a.value, b.value
    return _finish("mul", av * bv, (a, b),
                   lambda g: (_unbias(g * bv, av.shape), _unbias(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = const(a), const(b)
    _check_bias(a.value, b.value, "div")
    if np.any(b.value == 0):
        raise FloatingPointError("division by zero")
    av, bv = a.value, b.value
    y = av / bv
    return _finish("div", y, (a, b),
                   lambda g: (_unbias(g / bv, av.shape), _unbias(-g * y / bv, bv.shape)))


def exp(a) -> Tensor:
    a = const(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _finish("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = const(a)
    if np.any(a.value <= 0):
        raise FloatingPointError("log of non-positive value")
    av = a.value
    return _finish("log", np.log(av), (a,), lambda g: (g / av,))


def cos(a) -> Tensor:
    a = const(a)
    av = a.value
    return _finish("cos", np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def tanh(a) -> Tensor:
    a = const(a)
    y = np.tanh(a.value)
    return _finish("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = const(a)
    y = _sigmoid(a.value)
    return _finish("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def softplus(a) -> Tensor:
    """max(x, 0) + log1p(exp(-|x|)); stable for large |x|."""
    a = const(a)
    x = a.value
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _finish("softplus", y, (a,), lambda g: (g * _sigmoid(x),))


def clamp_min(a, floor: float) -> Tensor:
    a = const(a)
    keep = a.value >= floor
    return _finish("clamp_min", np.where(keep, a.value, floor), (a,),
                   lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ValueError("matmul needs at least 1-d operands")
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ValueError(f"matmul: shape mismatch {av.shape} @ {bv.shape}")
    if av.ndim > 2 and bv.ndim > 2 and av.shape[:-2] != bv.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ {av.shape} @ {bv.shape}")

    def rule(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if av.ndim == 1:
            return g @ np.swapaxes(bv, -1, -2), np.outer(av, g)
        if bv.ndim == 1:
            return np.multiply.outer(g, bv), np.tensordot(av, g, axes=(list(range(av.ndim - 1)), list(range(g.ndim))))
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbias(ga, av.shape), _unbias(gb, bv.shape)

    return _finish("matmul", av @ bv, (a, b), rule)


def concat(items: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(const(t) for t in items)
    if not ts:
        raise ValueError("concat of nothing")
    ax = axis % ts[0].ndim
    try:
        value = np.concatenate([t.value for t in ts], axis=ax)
    except ValueError as exc:
        raise ValueError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _finish("concat", value, ts, lambda g: tuple(np.split(g, bounds, axis=ax)))


def reshape(a, shape) -> Tensor:
    a = const(a)
    src = a.shape
    return _finish("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = const(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _finish("transpose", np.transpose(a.value, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def getitem(a, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate."""
    a = const(a)
    src = a.shape

    def rule(g):
        out = np.zeros(src, dtype=DTYPE)
        np.add.at(out, key, g)
        return (out,)

    return _finish("getitem", a.value[key], (a,), rule)


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` along axis 0."""
    return getitem(a, np.asarray(idx, dtype=np.intp))


def tsum(a, axis=None) -> Tensor:
    a = const(a)
    src = a.shape

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _finish("sum", a.value.sum(axis=axis), (a,), rule)


def mean(a, axis=None) -> Tensor:
    a = const(a)
    n = a.value.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def softmax(a, axis: int = -1) -> Tensor:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _finish("softmax", y, (a,),
                   lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _finish("log_softmax", y, (a,),
                   lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def stack_scalars(items: Iterable[Tensor]) -> Tensor:
    return concat([reshape(const(t), (1,)) for t in items], axis=0)
