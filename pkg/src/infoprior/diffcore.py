"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation in creation order, which is also a
valid topological order, so :func:`backward` is a single reverse sweep.
Tapes are cheap and meant to be rebuilt for every forward pass.

Example
-------
>>> tape = Tape()
>>> x = tape.var(3.0)
>>> grads = backward(tape, x * x)
>>> float(grads[x])
6.0
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "DimensionError",
    "DegenerateInputError",
    "DomainError",
    "ContractError",
    "Node",
    "Tape",
    "backward",
    "finite_diff_check",
    "op_matmul",
    "op_relu",
    "op_variance",
    "op_lgamma",
]


class DimensionError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Node:
    """A value recorded on a tape.

    ``parents`` holds ``(parent id, rule tag)`` pairs; ``vjp`` maps the
    upstream gradient to one gradient per parent.
    """

    __slots__ = ("tape", "id", "value", "parents", "vjp")
    # Makes numpy defer to the reflected operators, e.g. ndarray * Node.
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", value: np.ndarray, parents=(), vjp=None):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.id = tape._append(self)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node(id={self.id}, shape={self.shape})"

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return op_matmul(self, other)

    def __rmatmul__(self, other):
        return op_matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Append-only record of nodes. Not thread-safe while being written."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def var(self, value) -> Node:
        """Create a leaf node holding a float64 copy of ``value``."""
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("leaf values must be finite")
        return Node(self, arr)

    def const(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.nodes)


def _as_node(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ContractError("operands live on different tapes")
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ContractError("at least one operand must be a Node")


def _binary(a, b):
    tape = _tape_of(a, b)
    return tape, _as_node(tape, a), _as_node(tape, b)


def _make(tape, value, parents, tag, vjp):
    return Node(tape, value, [(p.id, tag) for p in parents], vjp)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    tape, a, b = _binary(a, b)
    sa, sb = a.shape, b.shape
    return _make(tape, a.value + b.value, (a, b), "add",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Node:
    tape, a, b = _binary(a, b)
    sa, sb = a.shape, b.shape
    return _make(tape, a.value - b.value, (a, b), "sub",
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Node:
    tape, a, b = _binary(a, b)
    av, bv = a.value, b.value
    return _make(tape, av * bv, (a, b), "mul",
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Node:
    tape, a, b = _binary(a, b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(tape, out, (a, b), "div",
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def neg(a: Node) -> Node:
    return _make(a.tape, -a.value, (a,), "neg", lambda g: (-g,))


def power(a: Node, exponent: float) -> Node:
    """``a ** exponent`` for a constant real exponent."""
    av = a.value
    p = float(exponent)
    return _make(a.tape, av ** p, (a,), "pow",
                 lambda g: (g * p * av ** (p - 1.0),))


def square(a: Node) -> Node:
    av = a.value
    return _make(a.tape, av * av, (a,), "square", lambda g: (2.0 * g * av,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return _make(a.tape, out, (a,), "exp", lambda g: (g * out,))


def log(a: Node) -> Node:
    av = a.value
    if np.any(av <= 0):
        raise DomainError("log of nonpositive value")
    return _make(a.tape, np.log(av), (a,), "log", lambda g: (g / av,))


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return _make(a.tape, out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def sigmoid(a: Node) -> Node:
    out = special.expit(a.value)
    return _make(a.tape, out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a: Node) -> Node:
    """log(sigmoid(a)), stable for large |a|."""
    av = a.value
    out = -np.logaddexp(0.0, -av)
    return _make(a.tape, out, (a,), "log_sigmoid",
                 lambda g: (g * special.expit(-av),))


def softplus(a: Node) -> Node:
    av = a.value
    return _make(a.tape, np.logaddexp(0.0, av), (a,), "softplus",
                 lambda g: (g * special.expit(av),))


def op_relu(a: Node) -> Node:
    """Elementwise max(0, x). The derivative at exactly 0 is taken as 0."""
    mask = (a.value > 0).astype(np.float64)
    return _make(a.tape, a.value * mask, (a,), "relu", lambda g: (g * mask,))


def op_lgamma(a: Node) -> Node:
    """log Gamma(x) for x > 0, with digamma as its derivative."""
    av = a.value
    if np.any(av <= 0):
        raise DomainError("lgamma requires a positive argument")
    return _make(a.tape, special.gammaln(av), (a,), "lgamma",
                 lambda g: (g * special.digamma(av),))


# ---------------------------------------------------------------------------
# shape and reductions
# ---------------------------------------------------------------------------


def sum_(a: Node, axis=None) -> Node:
    shape = a.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.tape, np.sum(a.value, axis=axis), (a,), "sum", vjp)


def mean(a: Node, axis=None) -> Node:
    n = a.value.size if axis is None else a.shape[axis]
    return sum_(a, axis) / float(n)


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return _make(a.tape, a.value.reshape(shape), (a,), "reshape",
                 lambda g: (g.reshape(old),))


def getitem(a: Node, index) -> Node:
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.tape, a.value[index], (a,), "getitem", vjp)


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    tape = _tape_of(*nodes)
    nodes = [_as_node(tape, n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return _make(tape, np.concatenate([n.value for n in nodes], axis=axis), nodes,
                 "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def op_matmul(a, b) -> Node:
    """Matrix product with numpy's stacked-matrix broadcasting.

    Both operands must have at least two dimensions.
    """
    tape, a, b = _binary(a, b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(tape, np.matmul(av, bv), (a, b), "matmul", vjp)


def op_variance(a: Node, axis=None) -> Node:
    """Population variance (divides by N).

    With ``axis=None`` the flattened values are used; otherwise the variance
    is taken along ``axis``.
    """
    av = a.value
    n = av.size if axis is None else av.shape[axis]
    if n < 2:
        raise DegenerateInputError("variance needs at least 2 elements")
    centered = av - av.mean(axis=axis, keepdims=True)
    out = (centered ** 2).mean(axis=axis)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (g * 2.0 * centered / n,)

    return _make(a.tape, out, (a,), "variance", vjp)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


class Gradients(dict):
    """Mapping from node id to gradient array; also indexable by Node."""

    def __getitem__(self, key):
        if isinstance(key, Node):
            key = key.id
        return super().__getitem__(key)


def backward(tape: Tape, output: Node) -> Gradients:
    """Gradients of the scalar ``output`` with respect to every node.

    Nodes that do not influence ``output`` get a zero gradient.
    """
    if output.tape is not tape:
        raise ContractError("output does not belong to this tape")
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    acc: dict[int, np.ndarray] = {output.id: np.ones_like(output.value)}
    nodes = tape.nodes
    for i in range(output.id, -1, -1):
        g = acc.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.vjp is None:
            continue
        for (pid, _tag), pg in zip(node.parents, node.vjp(g)):
            if pid in acc:
                acc[pid] = acc[pid] + pg
            else:
                acc[pid] = pg
    grads = Gradients()
    for node in nodes:
        g = acc.get(node.id)
        grads[node.id] = np.zeros_like(node.value) if g is None else np.asarray(g).reshape(node.shape)
    return grads


def grad(f: Callable[[Tape, Node], Node], point) -> tuple[float, np.ndarray]:
    """Value and gradient of ``f`` at ``point``; ``f`` builds on a fresh tape."""
    tape = Tape()
    x = tape.var(point)
    out = f(tape, x)
    return float(out.value), backward(tape, out)[x]


def finite_diff_check(f: Callable[[Tape, Node], Node], point, step: float = 1e-6) -> float:
    """Max relative error between the tape gradient and central differences.

    The error per coordinate is ``|analytic - numeric| / (|analytic| + step)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.array(point, dtype=np.float64)
    _, analytic = grad(f, point)

    def value(p):
        tape = Tape()
        return float(f(tape, tape.var(p)).value)

    numeric = np.empty_like(point)
    flat = numeric.reshape(-1)
    for k in range(point.size):
        up = point.copy().reshape(-1)
        dn = point.copy().reshape(-1)
        up[k] += step
        dn[k] -= step
        flat[k] = (value(up.reshape(point.shape)) - value(dn.reshape(point.shape))) / (2.0 * step)
    if point.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / (np.abs(analytic) + step)
    return float(err.max())
