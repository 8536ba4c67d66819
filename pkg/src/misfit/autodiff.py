"""Reverse-mode differentiation on a tape of numpy-valued nodes.

Every operation that touches a :class:`Node` appends a new node to the active
:class:`Tape` together with one vector-Jacobian product per parent.  Nodes are
appended in creation order, which is already a topological order, so the
backward sweep simply walks the tape in reverse.

Plain numpy arrays and floats flow through the same functions untouched, which
lets the loss code be shared between training (differentiated) and evaluation
(plain numpy).
"""
from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "GradientError",
    "Node",
    "Tape",
    "grad",
    "value_of",
    "exp",
    "log",
    "tanh",
    "relu",
    "softplus",
    "sigmoid",
    "sqrt",
    "square",
    "matmul",
    "einsum",
    "sum",
    "mean",
    "concat",
    "where",
    "take_along_axis",
    "cumsum",
    "softmax",
    "logsumexp",
]


class GradientError(FloatingPointError):
    """Raised when a backward pass produces a non-finite partial."""


_state = threading.local()


def _active_tape() -> "Tape":
    tape = getattr(_state, "tape", None)
    if tape is None:
        raise RuntimeError("no active tape; wrap the computation in `with Tape():`")
    return tape


class Tape:
    """Records nodes for one loss evaluation.

    Use as a context manager; the tape is discarded on exit so each loss
    evaluation starts from an empty record.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._previous = None

    def __enter__(self) -> "Tape":
        self._previous = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = self._previous
        self.nodes = []
        return False

    def variable(self, value) -> "Node":
        """Register a differentiable leaf."""
        return Node(np.array(value, dtype=np.float64), (), tape=self)

    def _record(self, node: "Node") -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


class Node:
    __slots__ = ("value", "parents", "index", "tape", "op")
    # make numpy defer to the reflected Node operators
    __array_ufunc__ = None

    def __init__(self, value, parents, tape=None, op="leaf"):
        self.value = value
        # parents: tuple of (Node, vjp) where vjp maps the output cotangent to
        # this parent's cotangent
        self.parents = parents
        self.op = op
        self.tape = tape if tape is not None else _active_tape()
        self.index = self.tape._record(self)

    shape = property(lambda self: self.value.shape)
    ndim = property(lambda self: self.value.ndim)
    T = property(lambda self: transpose(self))

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Node(#{self.index} {self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _is_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(value, parents, op):
    parents = tuple((p, f) for p, f in parents if isinstance(p, Node))
    return Node(value, parents, op=op)


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    va, vb = value_of(a), value_of(b)
    out = va + vb
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _make(out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))], "add")


def neg(a):
    if not isinstance(a, Node):
        return -a
    return _make(-a.value, [(a, lambda g: -g)], "neg")


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va * vb
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _make(
        out,
        [(a, lambda g: _unbroadcast(g * vb, sa)), (b, lambda g: _unbroadcast(g * va, sb))],
        "mul",
    )


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _make(
        out,
        [(a, lambda g: _unbroadcast(g / vb, sa)), (b, lambda g: _unbroadcast(-g * out / vb, sb))],
        "div",
    )


def power(a, p):
    if isinstance(p, Node):
        raise TypeError("only constant exponents are supported")
    va = value_of(a)
    out = va**p
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g * p * va ** (p - 1))], "pow")


def square(a):
    va = value_of(a)
    if not isinstance(a, Node):
        return va * va
    return _make(va * va, [(a, lambda g: 2.0 * g * va)], "square")


def exp(a):
    out = np.exp(value_of(a))
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g * out)], "exp")


def log(a):
    va = value_of(a)
    out = np.log(va)
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g / va)], "log")


def sqrt(a):
    out = np.sqrt(value_of(a))
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: 0.5 * g / out)], "sqrt")


def tanh(a):
    out = np.tanh(value_of(a))
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g * (1.0 - out * out))], "tanh")


def relu(a):
    va = value_of(a)
    out = np.maximum(va, 0.0)
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g * (va > 0.0))], "relu")


def sigmoid(a):
    va = value_of(a)
    out = np.exp(-np.logaddexp(0.0, -va))
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: g * out * (1.0 - out))], "sigmoid")


def softplus(a):
    va = value_of(a)
    out = np.logaddexp(0.0, va)
    if not isinstance(a, Node):
        return out
    sig = np.exp(-np.logaddexp(0.0, -va))
    return _make(out, [(a, lambda g: g * sig)], "softplus")


def where(mask, a, b):
    """Select ``a`` where ``mask`` holds, else ``b``; ``mask`` is constant."""
    mask = np.asarray(value_of(mask), dtype=bool)
    va, vb = value_of(a), value_of(b)
    out = np.where(mask, va, vb)
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _make(
        out,
        [
            (a, lambda g: _unbroadcast(np.where(mask, g, 0.0), sa)),
            (b, lambda g: _unbroadcast(np.where(mask, 0.0, g), sb)),
        ],
        "where",
    )


# ----------------------------------------------------------------------------
# shape and reduction


def sum(a, axis=None, keepdims=False):
    va = value_of(a)
    out = np.sum(va, axis=axis, keepdims=keepdims)
    if not isinstance(a, Node):
        return out
    shape = va.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _make(out, [(a, vjp)], "sum")


def mean(a, axis=None, keepdims=False):
    va = value_of(a)
    count = va.size if axis is None else np.prod([va.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) / float(count)


def reshape(a, shape):
    va = value_of(a)
    out = np.reshape(va, shape)
    if not isinstance(a, Node):
        return out
    old = va.shape
    return _make(out, [(a, lambda g: np.reshape(g, old))], "reshape")


def transpose(a):
    va = value_of(a)
    if not isinstance(a, Node):
        return va.T
    return _make(va.T, [(a, lambda g: g.T)], "transpose")


class _Scatter:
    """Cotangent that is zero except on ``idx``; added in place by :func:`grad`."""

    __slots__ = ("idx", "g")

    def __init__(self, idx, g):
        self.idx, self.g = idx, g

    def add_into(self, buf):
        if _is_basic_index(self.idx):
            buf[self.idx] += self.g
        else:
            np.add.at(buf, self.idx, self.g)


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(a, idx):
    va = value_of(a)
    out = va[idx]
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: _Scatter(idx, g))], "getitem")


def concat(items, axis=-1):
    values = [np.asarray(value_of(x), dtype=np.float64) for x in items]
    out = np.concatenate(values, axis=axis)
    if not _is_node(*items):
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    parents = []
    for x, lo, hi in zip(items, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(lo, hi)
        parents.append((x, lambda g, sl=tuple(sl): g[sl]))
    return _make(out, parents, "concat")


def take_along_axis(a, indices, axis):
    """Gather with constant integer ``indices``."""
    va = value_of(a)
    out = np.take_along_axis(va, indices, axis=axis)
    if not isinstance(a, Node):
        return out
    shape = va.shape

    def vjp(g):
        full = np.zeros(shape)
        # indices may repeat along the axis, so accumulate explicitly
        idx = list(np.indices(indices.shape, sparse=True))
        idx[axis] = indices
        np.add.at(full, tuple(idx), g)
        return full

    return _make(out, [(a, vjp)], "take")


def cumsum(a, axis=-1):
    va = value_of(a)
    out = np.cumsum(va, axis=axis)
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))], "cumsum")


# ----------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va @ vb
    if not _is_node(a, b):
        return out

    def vjp_a(g):
        if vb.ndim == 1:
            return np.multiply.outer(g, vb)
        return g @ np.swapaxes(vb, -1, -2)

    def vjp_b(g):
        if va.ndim == 1:
            return np.multiply.outer(va, g)
        return _unbroadcast(np.swapaxes(va, -1, -2) @ g, vb.shape)

    return _make(out, [(a, vjp_a), (b, vjp_b)], "matmul")


def einsum(subscripts, a, b):
    """Two-operand einsum whose operand indices are all distinct.

    Every index of an operand must occur in the other operand or the output,
    so each cotangent is again a two-operand einsum.
    """
    ins, out_spec = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    va, vb = value_of(a), value_of(b)
    out = np.einsum(subscripts, va, vb, optimize=True)
    if not _is_node(a, b):
        return out
    return _make(
        out,
        [
            (a, lambda g: np.einsum(f"{out_spec},{sb}->{sa}", g, vb, optimize=True)),
            (b, lambda g: np.einsum(f"{out_spec},{sa}->{sb}", g, va, optimize=True)),
        ],
        "einsum",
    )


# ----------------------------------------------------------------------------
# composite primitives with fused backward


def softmax(a, axis=-1):
    va = value_of(a)
    shifted = va - va.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not isinstance(a, Node):
        return out
    return _make(out, [(a, lambda g: out * (g - (g * out).sum(axis=axis, keepdims=True)))], "softmax")


def logsumexp(a, axis=-1):
    va = value_of(a)
    m = va.max(axis=axis, keepdims=True)
    out_k = m + np.log(np.exp(va - m).sum(axis=axis, keepdims=True))
    out = np.squeeze(out_k, axis=axis)
    if not isinstance(a, Node):
        return out
    weights = np.exp(va - out_k)
    return _make(out, [(a, lambda g: np.expand_dims(g, axis) * weights)], "logsumexp")


# ----------------------------------------------------------------------------


def _accumulate(cot, owned, parent, contrib):
    key = parent.index
    prev = cot.get(key)
    if isinstance(contrib, _Scatter):
        if key not in owned:
            buf = np.zeros(parent.value.shape)
            if prev is not None:
                buf += prev
            cot[key] = prev = buf
            owned.add(key)
        contrib.add_into(prev)
    elif prev is None:
        cot[key] = contrib
    elif key in owned:
        prev += contrib
    else:
        cot[key] = prev + contrib
        owned.add(key)


def grad(loss: Node, *wrt: Node):
    """Cotangents of scalar ``loss`` with respect to each node in ``wrt``.

    Returns a single array when one target is given, else a tuple.
    """
    if not isinstance(loss, Node):
        zeros = tuple(np.zeros_like(w.value) for w in wrt)
        return zeros[0] if len(zeros) == 1 else zeros
    if np.size(loss.value) != 1:
        raise ValueError(f"loss must be scalar, got shape {np.shape(loss.value)}")
    if not np.isfinite(loss.value).all():
        raise GradientError(f"loss is not finite ({float(loss.value)})")
    tape = loss.tape
    wanted = {w.index for w in wrt}
    found: dict[int, np.ndarray] = {}
    cot: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    # buffers allocated here may be updated in place; vjp results may be views
    owned: set[int] = set()
    for node in reversed(tape.nodes[: loss.index + 1]):
        g = cot.pop(node.index, None)
        if g is None:
            continue
        owned.discard(node.index)
        if not np.isfinite(g).all():
            raise GradientError(f"non-finite partial at node {node.index} ({node.op})")
        if node.index in wanted:
            found[node.index] = g
        for parent, vjp in node.parents:
            _accumulate(cot, owned, parent, vjp(g))
    out = [np.array(found[w.index], dtype=np.float64) if w.index in found else np.zeros_like(w.value) for w in wrt]
    return out[0] if len(out) == 1 else tuple(out)
