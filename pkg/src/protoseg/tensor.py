"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is dynamic: every op executed while gradient recording is enabled
links its output to its inputs together with a closure that maps the
upstream gradient onto the inputs. ``Tensor.backward`` walks that graph once
in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class OpCounter:
    """Tally of executed ops keyed by (kind, operand shapes).

    Two forward passes that perform the same amount of work produce equal
    counters, which is how the fixed-cost property of inference is checked.
    """

    def __init__(self) -> None:
        self.counts: Counter = Counter()

    def record(self, kind: str, *dims) -> None:
        self.counts[(kind,) + tuple(dims)] += 1

    def total(self) -> int:
        return sum(self.counts.values())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OpCounter) and self.counts == other.counts


def record_op(kind: str, *dims) -> None:
    """Report an op to the active counter, if any (non-tensor code uses this too)."""
    counter = getattr(_state, "counter", None)
    if counter is not None:
        counter.record(kind, *dims)


@contextlib.contextmanager
def count_ops():
    counter = OpCounter()
    prev = getattr(_state, "counter", None)
    _state.counter = counter
    try:
        yield counter
    finally:
        _state.counter = prev


def _as_array(x) -> np.ndarray:
    return np.array(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x.astype(np.float64, copy=False)


class Tensor:
    """n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(_as_array(data))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    # -- introspection ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, back) -> Tensor:
    out = Tensor(data)
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = back
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- linear algebra --------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    record_op("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), "matmul", back)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: (g.T,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make(out, (a,), "reshape", lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    record_op("concat", tuple(t.shape for t in tensors))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), "concat", back)


# -- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    record_op("add", a.shape, b.shape)
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")
    record_op("sub", a.shape, b.shape)
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    record_op("mul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, a.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, b.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), "mul", back)


def scale(a: Tensor, s: float) -> Tensor:
    record_op("scale", a.shape)
    return _make(a.data * s, (a,), "scale", lambda g: (g * s,))


def relu(a: Tensor) -> Tensor:
    record_op("relu", a.shape)
    # gradient at exactly 0 is 0
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), "relu", lambda g: (g * on,))


def tanh(a: Tensor) -> Tensor:
    record_op("tanh", a.shape)
    y = np.tanh(a.data)
    return _make(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    record_op("sigmoid", a.shape)
    y = _sigmoid(a.data)
    return _make(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    record_op("softplus", a.shape)
    x = a.data
    return _make(np.logaddexp(0.0, x), (a,), "softplus", lambda g: (g * _sigmoid(x),))


def elementwise(op: str, *inputs, factor: float | None = None) -> Tensor:
    """Dispatch by name; ``factor`` is the multiplier for ``scale``."""
    unary = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid, "softplus": softplus}
    binary = {"add": add, "sub": sub, "mul": mul}
    if op in unary:
        return unary[op](*inputs)
    if op in binary:
        return binary[op](*inputs)
    if op == "scale":
        return scale(inputs[0], factor)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- reductions and indexing ------------------------------------------------

def _check_axis(a: Tensor, axis: int | None) -> None:
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank-{a.ndim} tensor")


def reduce(op: str, a: Tensor, axis: int | None = None) -> Tensor:
    """Reduce along ``axis`` (all elements when None).

    ``max``/``min`` route the gradient to the first extremal index.
    """
    _check_axis(a, axis)
    record_op("reduce_" + op, a.shape, axis)
    x = a.data
    if op == "sum":
        out = x.sum(axis=axis)

        def back(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)
    elif op == "mean":
        n = x.size if axis is None else x.shape[axis]
        out = x.mean(axis=axis)

        def back(g):
            g = g if axis is None else np.expand_dims(g, axis)
            return (np.broadcast_to(g / n, x.shape).copy(),)
    elif op in ("max", "min"):
        pick = np.argmax if op == "max" else np.argmin
        if axis is None:
            flat = int(pick(x.reshape(-1)))
            out = np.asarray(x.reshape(-1)[flat])

            def back(g):
                dx = np.zeros(x.size)
                dx[flat] = g
                return (dx.reshape(x.shape),)
        else:
            idx = np.expand_dims(pick(x, axis=axis), axis)
            out = np.take_along_axis(x, idx, axis=axis).squeeze(axis)

            def back(g):
                dx = np.zeros_like(x)
                np.put_along_axis(dx, idx, np.expand_dims(g, axis), axis=axis)
                return (dx,)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    return _make(np.asarray(out, dtype=np.float64), (a,), "reduce_" + op, back)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows; the backward pass scatter-adds so duplicates accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    n = a.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    record_op("gather_rows", a.shape, idx.shape)

    def back(g):
        dx = np.zeros_like(a.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _make(a.data[idx], (a,), "gather_rows", back)


# -- losses ---------------------------------------------------------------

def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0,1} targets.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; outside that band the
    gradient is zero.
    """
    t = target.data if isinstance(target, Tensor) else _as_array(target)
    if pred.shape != t.shape:
        raise DimensionError(f"bce: pred {pred.shape} vs target {t.shape}")
    record_op("bce", pred.shape)
    p = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.size
    val = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)

    def back(g):
        return (g * inside * (p - t) / (p * (1.0 - p)) / n,)

    return _make(np.asarray(val), (pred,), "bce", back)


# -- graph traversal ------------------------------------------------------

@dataclass
class Graph:
    """Executed ops reachable from a root, inputs before outputs."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(Graph.from_root(loss).nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- optimiser -------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"adam_step: parameter {missing[0]!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
