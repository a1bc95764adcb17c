"""Reverse-mode automatic differentiation over dense float64 arrays.

Every backward rule is written with the same graph operations used in the
forward pass, so a gradient computed with ``create_graph=True`` is itself a
graph that can be differentiated again. Gradient-matching losses need this:
they differentiate through a weight gradient.

Tensors are plain ``numpy.ndarray`` values of dtype float64; :class:`Node`
wraps one and records how it was produced.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

__all__ = [
    "Node", "ShapeError", "GradientError", "tensor", "constant", "grad", "no_grad",
    "enable_grad", "is_grad_enabled", "finite_difference_gradient",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt", "tanh", "relu",
    "absolute", "matmul", "transpose", "reshape", "sum", "mean", "broadcast_to",
    "sum_to", "getitem", "scatter", "concat", "inner", "l2_norm",
]


class ShapeError(ValueError):
    """Operands of a graph operation have incompatible shapes."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class GradientError(ValueError):
    """Raised when a backward pass is requested on an invalid root."""


_mode = threading.local()


def is_grad_enabled():
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def _set_grad_enabled(flag):
    prev = is_grad_enabled()
    _mode.enabled = flag
    try:
        yield
    finally:
        _mode.enabled = prev


def no_grad():
    """Context manager under which operations record no lineage."""
    return _set_grad_enabled(False)


def enable_grad():
    return _set_grad_enabled(True)


class Node:
    """A value in the computation graph.

    ``parents`` and ``vjp`` are only populated when the node requires a
    gradient; constants are leaves with no lineage.
    """

    __slots__ = ("value", "op", "parents", "requires_grad", "vjp")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value.reshape(()))

    def numpy(self):
        return self.value

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Node(op={self.op}, shape={self.shape}{flag})"

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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(value, requires_grad=False):
    return Node(np.array(value, dtype=np.float64), requires_grad=requires_grad)


def constant(value):
    if isinstance(value, Node):
        return value
    return Node(value)


def _result(value, op, parents, vjp):
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Node(value, True, op, parents, vjp)
    return Node(value)


# ---------------------------------------------------------------- elementwise

def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)
    return _result(a.value + b.value, "add", (a, b),
                   lambda g: (sum_to(g, a.shape), sum_to(g, b.shape)))


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)
    return _result(a.value - b.value, "sub", (a, b),
                   lambda g: (sum_to(g, a.shape), neg(sum_to(g, b.shape))))


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("mul", a, b)
    return _result(a.value * b.value, "mul", (a, b),
                   lambda g: (sum_to(mul(g, b), a.shape), sum_to(mul(g, a), b.shape)))


def div(a, b):
    a, b = constant(a), constant(b)
    _broadcast_shape("div", a, b)
    return _result(
        a.value / b.value, "div", (a, b),
        lambda g: (sum_to(div(g, b), a.shape),
                   sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)))


def neg(a):
    a = constant(a)
    return _result(-a.value, "neg", (a,), lambda g: (neg(g),))


def power(a, p):
    """Raise to a constant real exponent."""
    a = constant(a)
    p = float(p)
    if p == 1.0:
        return a
    return _result(a.value ** p, "power", (a,),
                   lambda g: (mul(g, mul(p, power(a, p - 1.0))),))


def exp(a):
    a = constant(a)
    out = _result(np.exp(a.value), "exp", (a,), None)
    out.vjp = lambda g: (mul(g, out),)
    return out


def log(a):
    a = constant(a)
    return _result(np.log(a.value), "log", (a,), lambda g: (div(g, a),))


def sqrt(a):
    a = constant(a)
    out = _result(np.sqrt(a.value), "sqrt", (a,), None)
    out.vjp = lambda g: (div(g, mul(2.0, out)),)
    return out


def tanh(a):
    a = constant(a)
    out = _result(np.tanh(a.value), "tanh", (a,), None)
    out.vjp = lambda g: (mul(g, sub(1.0, mul(out, out))),)
    return out


def relu(a):
    # subgradient at exactly 0 is 0
    a = constant(a)
    mask = (a.value > 0).astype(np.float64)
    return _result(np.where(mask > 0, a.value, 0.0), "relu", (a,), lambda g: (mul(g, mask),))


def absolute(a):
    # subgradient at exactly 0 is 0
    a = constant(a)
    sign = np.sign(a.value)
    return _result(np.abs(a.value), "abs", (a,), lambda g: (mul(g, sign),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _result(a.value @ b.value, "matmul", (a, b),
                   lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)))


def transpose(a, axes=None):
    a = constant(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.value, axes), "transpose", (a,),
                   lambda g: (transpose(g, inverse),))


def inner(a, b):
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError("inner", a.shape, b.shape)
    return sum(mul(a, b))


def l2_norm(a):
    return sqrt(sum(mul(a, a)))


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    a = constant(a)
    shape = tuple(int(s) for s in shape)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _result(value, "reshape", (a,), lambda g: (reshape(g, a.shape),))


def sum(a, axis=None, keepdims=False):
    a = constant(a)
    value = np.sum(a.value, axis=axis, keepdims=True)
    kept_shape = value.shape
    if not keepdims:
        value = np.sum(a.value, axis=axis)
    return _result(value, "sum", (a,),
                   lambda g: (broadcast_to(reshape(g, kept_shape), a.shape),))


def mean(a, axis=None, keepdims=False):
    a = constant(a)
    total = sum(a, axis=axis, keepdims=keepdims)
    count = a.size // max(total.size, 1) if a.size else 1
    return mul(total, 1.0 / count)


def broadcast_to(a, shape):
    a = constant(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    try:
        value = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None
    return _result(value, "broadcast_to", (a,), lambda g: (sum_to(g, a.shape),))


def sum_to(a, shape):
    """Sum a broadcast result back down to ``shape``."""
    a = constant(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    if lead < 0:
        raise ShapeError("sum_to", a.shape, shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, s in enumerate(shape) if s == 1 and a.shape[lead + i] != 1)
    value = np.sum(a.value, axis=axes, keepdims=True).reshape(shape)
    return _result(value, "sum_to", (a,), lambda g: (broadcast_to(g, a.shape),))


def getitem(a, idx):
    a = constant(a)
    value = np.array(a.value[idx], dtype=np.float64)
    return _result(value, "getitem", (a,), lambda g: (scatter(g, a.shape, idx),))


def scatter(a, shape, idx):
    """Add ``a`` into a zero array of ``shape`` at ``idx`` (adjoint of getitem)."""
    a = constant(a)
    out = np.zeros(shape)
    np.add.at(out, idx, a.value)
    return _result(out, "scatter", (a,), lambda g: (getitem(g, idx),))


def concat(nodes, axis=0):
    nodes = [constant(n) for n in nodes]
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[n.shape for n in nodes]) from None
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def vjp(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            parts.append(getitem(g, tuple(sl)))
        return tuple(parts)

    return _result(value, "concat", tuple(nodes), vjp)


# ---------------------------------------------------------------- backward

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root, wrt, create_graph=False):
    """Gradients of scalar ``root`` with respect to each node in ``wrt``.

    With ``create_graph=True`` the results are :class:`Node` objects that can
    be differentiated again; otherwise plain arrays are returned. A target that
    does not influence ``root`` gets a zero gradient.
    """
    if root.size != 1:
        raise GradientError(f"backward needs a scalar root, got shape {root.shape}")
    single = isinstance(wrt, Node)
    targets = [wrt] if single else list(wrt)
    for t in targets:
        if not t.requires_grad:
            raise GradientError(f"target {t!r} does not require grad")

    order = _toposort(root)
    target_ids = {id(t) for t in targets}
    relevant = set()
    for node in order:
        if id(node) in target_ids or any(id(p) in relevant for p in node.parents):
            relevant.add(id(node))

    grads = {id(root): Node(np.ones_like(root.value))}
    found = {}
    with _set_grad_enabled(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None or id(node) not in relevant:
                continue
            if id(node) in target_ids:
                found[id(node)] = g
            if not node.parents:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or id(parent) not in relevant:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else add(prev, pg)

    out = []
    for t in targets:
        g = found.get(id(t))
        if g is None:
            g = Node(np.zeros_like(t.value))
        out.append(g if create_graph else g.value)
    return out[0] if single else out


def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = float(f(x))
        flat_x[i] = orig - h
        fm = float(f(x))
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2 * h)
    return g
