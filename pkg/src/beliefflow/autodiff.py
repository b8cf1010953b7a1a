"""Reverse-mode automatic differentiation over a flat parameter vector.

A scalar objective is expressed as a composition of primitive array
operations (arithmetic, ``exp``/``log``/``tanh``, max, reductions, affine
maps, indexing) applied to a leaf :class:`Node` wrapping the parameter
values.  Calling :func:`value_and_grad` evaluates the composition and
back-propagates through the recorded trace, which is rebuilt on every call
(no persistent graph).

All primitives dispatch on their argument types: applied to plain numpy
arrays they compute values only, applied to :class:`Node` operands they
additionally record vector-Jacobian closures.  Model code can therefore be
written once and run either "hot" (numpy) or traced (differentiable).

Everything is double precision.  Any primitive producing a non-finite
value raises :class:`NonFiniteValueError` naming the offending operation.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "NonFiniteValueError",
    "Node",
    "ParamVector",
    "value_and_grad",
    "constant",
    "exp",
    "log",
    "log1p",
    "sqrt",
    "tanh",
    "softplus",
    "maximum",
    "amax",
    "asum",
    "matmul",
    "reshape",
    "where",
    "power",
]

_IDS = itertools.count()


class NonFiniteValueError(ArithmeticError):
    """A primitive produced a NaN or infinity."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by primitive '{op}'")
        self.op = op


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_finite(value: np.ndarray, op: str) -> None:
    # A finite sum implies all entries are finite (inf/nan propagate).
    s = value.sum()
    if not math.isfinite(s):
        if np.all(np.isfinite(value)):
            return  # benign overflow of the checksum itself
        raise NonFiniteValueError(op)


class Node:
    """One array-valued step in the evaluation trace."""

    __slots__ = ("value", "op", "_id", "_parents", "_vjps")
    __array_ufunc__ = None  # keep numpy from hijacking reflected operators

    def __init__(self, value, op: str = "leaf", parents=(), vjps=()):
        self.value = _as_value(value)
        self.op = op
        self._id = next(_IDS)
        self._parents = parents
        self._vjps = vjps
        _check_finite(self.value, op)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return take(self, key)


def constant(x) -> np.ndarray:
    """Coerce to a float64 array; constants are never recorded."""
    return _as_value(x)


def value_of(x) -> np.ndarray:
    """The plain array behind `x`, whether it is a Node or array-like."""
    return x.value if isinstance(x, Node) else _as_value(x)


_val = value_of


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op, fwd, vjp_a, vjp_b):
    def apply(a, b):
        a_node = isinstance(a, Node)
        b_node = isinstance(b, Node)
        av, bv = _val(a), _val(b)
        out = fwd(av, bv)
        if not (a_node or b_node):
            return out
        parents, vjps = [], []
        if a_node:
            parents.append(a)
            vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_a(g, av, bv), av.shape))
        if b_node:
            parents.append(b)
            vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_b(g, av, bv), bv.shape))
        return Node(out, op, tuple(parents), tuple(vjps))

    return apply


add = _binary("add", lambda a, b: a + b, lambda g, a, b: g, lambda g, a, b: g)
sub = _binary("sub", lambda a, b: a - b, lambda g, a, b: g, lambda g, a, b: -g)
mul = _binary("mul", lambda a, b: a * b, lambda g, a, b: g * b, lambda g, a, b: g * a)
div = _binary(
    "div",
    lambda a, b: a / b,
    lambda g, a, b: g / b,
    lambda g, a, b: -g * a / (b * b),
)
# Elementwise max; ties route the derivative through the first argument.
maximum = _binary(
    "maximum",
    lambda a, b: np.maximum(a, b),
    lambda g, a, b: g * (a >= b),
    lambda g, a, b: g * (a < b),
)


def _unary(op, fwd, vjp):
    def apply(x):
        xv = _val(x)
        out = fwd(xv)
        if not isinstance(x, Node):
            return out
        return Node(out, op, (x,), (lambda g, xv=xv, out=out: vjp(g, xv, out),))

    return apply


neg = _unary("neg", lambda x: -x, lambda g, x, y: -g)
exp = _unary("exp", np.exp, lambda g, x, y: g * y)
log = _unary("log", np.log, lambda g, x, y: g / x)
log1p = _unary("log1p", np.log1p, lambda g, x, y: g / (1.0 + x))
sqrt = _unary("sqrt", np.sqrt, lambda g, x, y: 0.5 * g / y)
tanh = _unary("tanh", np.tanh, lambda g, x, y: g * (1.0 - y * y))


def power(x, p):
    """x ** p for a constant exponent p."""
    p = float(p)
    xv = _val(x)
    out = xv**p
    if not isinstance(x, Node):
        return out
    return Node(out, "power", (x,), (lambda g: g * p * xv ** (p - 1.0),))


def softplus(x):
    """log(1 + exp(x)), computed stably; derivative is the sigmoid."""
    xv = _val(x)
    out = np.logaddexp(0.0, xv)
    if not isinstance(x, Node):
        return out
    sig = 1.0 / (1.0 + np.exp(-xv))
    return Node(out, "softplus", (x,), (lambda g: g * sig,))


def asum(x, axis=None, keepdims: bool = False):
    """Summation over all entries or along an axis."""
    xv = _val(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Node):
        return out

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return Node(out, "sum", (x,), (vjp,))


def amax(x, axis=None, keepdims: bool = False):
    """Max reduction; ties route to the first attaining entry."""
    xv = _val(x)
    out = xv.max(axis=axis, keepdims=keepdims)
    if not isinstance(x, Node):
        return out

    if axis is None:
        flat_idx = int(np.argmax(xv))

        def vjp(g):
            z = np.zeros_like(xv)
            z.flat[flat_idx] = np.asarray(g).item()
            return z

    else:
        idx = np.expand_dims(np.argmax(xv, axis=axis), axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            z = np.zeros_like(xv)
            np.put_along_axis(z, idx, g, axis)
            return z

    return Node(out, "max", (x,), (vjp,))


def matmul(a, b):
    """Affine-map primitive: 2-d matrix product."""
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-d operands only")
    out = av @ bv
    if not (isinstance(a, Node) or isinstance(b, Node)):
        return out
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: g @ bv.T)
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: av.T @ g)
    return Node(out, "matmul", tuple(parents), tuple(vjps))


def reshape(x, shape):
    xv = _val(x)
    out = xv.reshape(shape)
    if not isinstance(x, Node):
        return out
    return Node(out, "reshape", (x,), (lambda g: g.reshape(xv.shape),))


class _KeyedGrad:
    """Sparse gradient contribution: scatter `grad` at `key` of the parent.

    Returned by indexing vjps so that backward() can accumulate in place
    instead of materializing a dense zero array per indexing node.
    """

    __slots__ = ("key", "grad", "basic")

    def __init__(self, key, grad, basic):
        self.key = key
        self.grad = grad
        self.basic = basic

    def scatter_into(self, buffer: np.ndarray) -> None:
        if self.basic:
            buffer[self.key] += self.grad
        else:
            np.add.at(buffer, self.key, self.grad)


def _is_basic_key(key) -> bool:
    """Basic indexing never selects the same element twice, so plain
    ``buffer[key] += g`` accumulates correctly and fast."""
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (slice, int, np.integer)) for p in parts)


def take(x, key):
    """Indexing with a constant key (slices or integer arrays)."""
    xv = _val(x)
    out = xv[key]
    if not isinstance(x, Node):
        return out
    basic = _is_basic_key(key)
    return Node(out, "take", (x,), (lambda g: _KeyedGrad(key, g, basic),))


def where(cond, a, b):
    """Select by a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = _val(a), _val(b)
    out = np.where(cond, av, bv)
    if not (isinstance(a, Node) or isinstance(b, Node)):
        return out
    parents, vjps = [], []
    if isinstance(a, Node):
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(np.where(cond, g, 0.0), av.shape))
    if isinstance(b, Node):
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(np.where(cond, 0.0, g), bv.shape))
    return Node(out, "where", tuple(parents), tuple(vjps))


def backward(root: Node) -> dict[int, np.ndarray]:
    """Adjoints of every node reachable from `root`, keyed by node id."""
    seen: dict[int, Node] = {root._id: root}
    stack = [root]
    while stack:
        for parent in stack.pop()._parents:
            if parent._id not in seen:
                seen[parent._id] = parent
                stack.append(parent)
    # Functional construction guarantees creation order is topological.
    order = sorted(seen.values(), key=lambda n: n._id)
    adjoints: dict[int, np.ndarray] = {root._id: np.ones_like(root.value)}
    owned: set[int] = set()  # adjoint buffers safe to mutate in place
    for node in reversed(order):
        g = adjoints.get(node._id)
        if g is None:
            continue
        for parent, vjp in zip(node._parents, node._vjps):
            contrib = vjp(g)
            pid = parent._id
            if isinstance(contrib, _KeyedGrad):
                buffer = adjoints.get(pid)
                if buffer is None:
                    buffer = np.zeros_like(parent.value)
                elif pid not in owned:
                    buffer = buffer.copy()
                adjoints[pid] = buffer
                owned.add(pid)
                contrib.scatter_into(buffer)
            else:
                prev = adjoints.get(pid)
                if prev is None:
                    adjoints[pid] = contrib
                    owned.discard(pid)
                elif pid in owned:
                    prev += contrib
                else:
                    adjoints[pid] = prev + contrib
                    owned.add(pid)
    return adjoints


class ParamVector:
    """Flat double-precision parameter vector with named segments.

    Segments are disjoint slices that cover the vector exactly; they map
    model sub-parts (e.g. one conditioner weight matrix) to index ranges.
    """

    def __init__(self, values: np.ndarray, segments: Mapping[str, slice]):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite values")
        spans = sorted((s.start, s.stop) for s in segments.values())
        cursor = 0
        for start, stop in spans:
            if start != cursor or stop < start:
                raise ValueError("segments must be disjoint and cover the vector")
            cursor = stop
        if cursor != values.size:
            raise ValueError("segments must cover the vector exactly")
        self.values = values
        self.segments = dict(segments)

    @property
    def size(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        return self.values[self.segments[name]]

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.segments)

    def checksum(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)


# A differentiable scalar is any callable building a scalar Node from the
# parameter leaf node.
DifferentiableScalar = Callable[[Node], Node]


def value_and_grad(objective: DifferentiableScalar, params: ParamVector):
    """Evaluate `objective` at `params` and return (value, gradient).

    The gradient has the same shape as ``params.values`` and is the exact
    reverse-mode derivative of the composed primitives.
    """
    leaf = Node(params.values, op="parameters")
    with np.errstate(all="ignore"):
        out = objective(leaf)
        if not isinstance(out, Node):  # objective ignored the parameters
            out_value = float(_as_value(out))
            if not math.isfinite(out_value):
                raise NonFiniteValueError("objective")
            return out_value, np.zeros_like(params.values)
        if out.value.ndim != 0:
            raise ValueError("objective must evaluate to a scalar")
        adjoints = backward(out)
    grad = adjoints.get(leaf._id)
    if grad is None:
        grad = np.zeros_like(params.values)
    return float(out.value), grad


def finite_difference_gradient(
    fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Central finite differences of a scalar function, the reference oracle
    used to verify reverse-mode gradients.

    When `indices` is given only those coordinates are probed (the rest of
    the returned vector is NaN); useful for spot checks on large vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    if indices is None:
        indices = range(x.size)
        grad = np.zeros_like(x)
    else:
        grad = np.full_like(x, np.nan)
    for i in indices:
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return grad
