"""A small reverse-mode tape over dense float64 arrays.

Nodes are appended to their tape in creation order, which is already a
topological order, so ``Tape.backward`` is a single reverse sweep. Only
first derivatives; broadcasting follows numpy rules for <= 2-D operands.

    tape = Tape()
    x = tape.param(np.array([1.0, 2.0]))
    loss = ad.sum(x * x)
    tape.backward(loss)
    x.grad  # -> [2., 4.]
"""

import numpy as np


class ShapeError(ValueError):
    def __init__(self, op, a, b):
        super().__init__(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


class Node:
    __slots__ = ("value", "grad", "tape", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, tape, value, parents=(), backward_fn=None, op="leaf", requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self.name = name
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self.nodes = []

    def param(self, value, name=None):
        return Node(self, np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def const(self, value):
        return Node(self, np.asarray(value, dtype=np.float64))

    def backward(self, loss):
        if loss.tape is not self:
            raise ValueError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        stop = self.nodes.index(loss) if self.nodes[-1] is not loss else len(self.nodes) - 1
        for node in reversed(self.nodes[: stop + 1]):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)


def _accum(node, g):
    if not node.requires_grad:
        return
    # never in place: g may be shared with sibling parents
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _lift(tape, x):
    return x if isinstance(x, Node) else tape.const(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a Node")


def _make(tape, value, parents, backward_fn, op):
    rg = any(p.requires_grad for p in parents)
    return Node(tape, value, parents, backward_fn if rg else None, op, rg)


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(tape, value, (a, b), backward, "add")


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    try:
        value = a.value - b.value
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(tape, value, (a, b), backward, "sub")


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.shape))

    return _make(tape, value, (a, b), backward, "mul")


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    value = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            _accum(a, np.outer(g, b.value) if b.value.ndim == 1 else g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return _make(tape, value, (a, b), backward, "matmul")


def transpose(a):
    def backward(g):
        _accum(a, g.T)

    return _make(a.tape, a.value.T, (a,), backward, "transpose")


def reshape(a, shape):
    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _make(a.tape, a.value.reshape(shape), (a,), backward, "reshape")


def relu(a):
    mask = a.value > 0  # subgradient 0 at 0

    def backward(g):
        _accum(a, g * mask)

    return _make(a.tape, np.where(mask, a.value, 0.0), (a,), backward, "relu")


def exp(a):
    value = np.exp(a.value)

    def backward(g):
        _accum(a, g * value)

    return _make(a.tape, value, (a,), backward, "exp")


def reciprocal(a):
    value = 1.0 / a.value

    def backward(g):
        _accum(a, _unbroadcast(-g * value * value, a.shape))

    return _make(a.tape, value, (a,), backward, "reciprocal")


def sq_dists(a, b):
    """Pairwise squared distances |a_i - b_j|^2 between rows of a and b."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("sq_dists", a.shape, b.shape)
    diff_a = a.value[:, None, :] - b.value[None, :, :]
    value = np.sum(diff_a * diff_a, axis=2)

    def backward(g):
        # d/da_i = 2 sum_j g_ij (a_i - b_j), d/db_j = -2 sum_i g_ij (a_i - b_j)
        if a.requires_grad:
            _accum(a, 2.0 * (g.sum(axis=1)[:, None] * a.value - g @ b.value))
        if b.requires_grad:
            _accum(b, 2.0 * (g.sum(axis=0)[:, None] * b.value - g.T @ a.value))

    return _make(tape, value, (a, b), backward, "sq_dists")


def softmax(a, axis):
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(a.tape, y, (a,), backward, "softmax")


def softmax_columns(a):
    """Softmax over each column (tokens laid out as columns)."""
    return softmax(a, axis=0)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.tape, np.asarray(value), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_rows(a):
    """Average of the rows of a 2-D node (result has the row shape)."""
    return mean(a, axis=0)


def frob_sq(a):
    return sum(mul(a, a))


def trace(a):
    if a.value.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError("trace", a.shape, a.shape)
    n = a.shape[0]

    def backward(g):
        _accum(a, g * np.eye(n))

    return _make(a.tape, np.asarray(np.trace(a.value)), (a,), backward, "trace")


def outer(u, v):
    tape = _tape_of(u, v)
    u, v = _lift(tape, u), _lift(tape, v)
    if u.value.ndim != 1 or v.value.ndim != 1:
        raise ShapeError("outer", u.shape, v.shape)

    def backward(g):
        _accum(u, g @ v.value)
        _accum(v, g.T @ u.value)

    return _make(tape, np.outer(u.value, v.value), (u, v), backward, "outer")


def concat(nodes, axis=0):
    tape = _tape_of(*nodes)
    nodes = [_lift(tape, n) for n in nodes]
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError("concat", nodes[0].shape, nodes[-1].shape) from None
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(n, g[tuple(idx)])

    return _make(tape, value, tuple(nodes), backward, "concat")


def take(a, start, stop, axis=0):
    """Contiguous slice along ``axis``."""
    idx = [slice(None)] * a.value.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        _accum(a, full)

    return _make(a.tape, a.value[idx], (a,), backward, "take")


# --------------------------------------------------------------------------
# finite-difference checking


def central_diff(f, point, step=1e-5, coords=None):
    """Central-difference gradient of scalar ``f`` at ``point`` (selected coordinates)."""
    point = np.array(point, dtype=np.float64)
    coords = range(point.size) if coords is None else coords
    out = []
    for i in coords:
        hi = point.copy()
        lo = point.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        out.append((f(hi) - f(lo)) / (2.0 * step))
    return np.array(out)


def finite_diff_check(f, point, grad, step=1e-5, coords=None):
    """Max per-coordinate relative error between ``grad`` and central differences.

    Each coordinate is scaled by max(|analytic|, |numeric|, 1e-6 * max|grad|),
    so components far below the gradient's own scale are compared absolutely
    against that floor rather than amplifying roundoff.
    """
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    idx = np.arange(grad.size) if coords is None else np.asarray(coords)
    fd = central_diff(f, point, step, idx)
    g = grad[idx]
    floor = 1e-6 * max(1e-12, float(np.max(np.abs(grad))) if grad.size else 0.0)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return float(np.max(np.abs(g - fd) / denom)) if idx.size else 0.0


def pack(arrays, keys):
    return np.concatenate([np.asarray(arrays[k], dtype=np.float64).reshape(-1) for k in keys])


def unpack(vector, like, keys):
    out, pos = {}, 0
    for k in keys:
        shape = np.shape(like[k])
        size = int(np.prod(shape))
        out[k] = vector[pos:pos + size].reshape(shape)
        pos += size
    return out
