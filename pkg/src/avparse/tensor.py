"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is 64-bit and deterministic: ops execute eagerly on numpy
arrays, and when a Tape is active each differentiable op is recorded in
creation order (which is a topological order by construction). backward()
walks the tape once in reverse, accumulating gradients additively across
fan-out. Without an active tape, ops produce plain value tensors, which is
the cheap path used for teacher predictions and evaluation.

Broadcasting is supported only for scalars and leading-dim cases
(e.g. bias vectors added to every row of a matrix).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "GradCheckError",
    "backward", "grad_check", "no_tape", "as_tensor",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose",
    "sigmoid", "softmax", "log", "sqrt", "clamp",
    "sum", "mean", "concatenate", "narrow", "reshape", "stack", "l2_norm",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive."""


class GradCheckError(RuntimeError):
    """A gradient check ran into non-finite values."""


_STATE = threading.local()


def _tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Use as a context manager; ops executed inside record themselves.
    Single-threaded per tape: each thread may have at most one active tape.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if _tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def backward(self, loss):
        backward(self, loss)


@contextmanager
def no_tape():
    """Temporarily disable recording (value-only forward passes)."""
    prev = _tape()
    _STATE.tape = None
    try:
        yield
    finally:
        _STATE.tape = prev


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.data.shape} is not a scalar")
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar; constants on either side become leaf tensors
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __matmul__(self, other): return matmul(self, other)
    def __neg__(self): return neg(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    tape = _tape()
    if tape is not None:
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Reduce an upstream gradient back to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(tape, loss):
    """Propagate d(loss)/d(node) through the tape, reverse creation order.

    loss must be a scalar tensor. Leaf gradients accumulate additively, so
    zero stale .grad buffers (grad = None) before reusing parameters.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss has shape {loss.data.shape}, expected a scalar")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitives

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bk(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return _node(out, (a, b), bk)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bk(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))
    return _node(out, (a, b), bk)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bk(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _node(out, (a, b), bk)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.data.shape} and {b.data.shape} do not broadcast") from None

    def bk(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _node(out, (a, b), bk)


def neg(a):
    a = as_tensor(a)

    def bk(g):
        _accum(a, -g)
    return _node(-a.data, (a,), bk)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} @ {b.data.shape} do not conform")
    out = a.data @ b.data

    def bk(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return _node(out, (a, b), bk)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.data.shape}")

    def bk(g):
        _accum(a, g.T)
    return _node(a.data.T.copy(), (a,), bk)


def sigmoid(a):
    a = as_tensor(a)
    d = a.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bk(g):
        _accum(a, g * out * (1.0 - out))
    return _node(out, (a,), bk)


def softmax(a, axis):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bk(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * out)
    return _node(out, (a,), bk)


def log(a):
    a = as_tensor(a)

    def bk(g):
        _accum(a, g / a.data)
    return _node(np.log(a.data), (a,), bk)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bk(g):
        _accum(a, g * 0.5 / out)
    return _node(out, (a,), bk)


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient passes only strictly inside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    interior = (a.data > lo) & (a.data < hi)

    def bk(g):
        _accum(a, g * interior)
    return _node(out, (a,), bk)


def sum(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def bk(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))
    return _node(out, (a,), bk)


def mean(a, axis=None):
    a = as_tensor(a)
    out = a.data.mean(axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bk(g):
        scaled = g / count
        if axis is None:
            _accum(a, np.broadcast_to(scaled, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(scaled, axis), a.data.shape))
    return _node(out, (a,), bk)


def concatenate(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concatenate: no inputs")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        shapes = [p.data.shape for p in parts]
        raise ShapeError(f"concatenate: shapes {shapes} do not conform along axis {axis}") from None

    def bk(g):
        start = 0
        for p in parts:
            n = p.data.shape[axis]
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(p, g[tuple(sl)])
            start += n
    return _node(out, tuple(parts), bk)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise ShapeError(
            f"narrow: slice [{start}, {start + length}) out of range for shape "
            f"{a.data.shape} on axis {axis}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bk(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)
    return _node(a.data[sl].copy(), (a,), bk)


def reshape(a, shape):
    a = as_tensor(a)

    def bk(g):
        _accum(a, g.reshape(a.data.shape))
    return _node(a.data.reshape(shape).copy(), (a,), bk)


def stack(parts, axis=0):
    """Join tensors along a new axis (reshape + concatenate)."""
    expanded = []
    for p in parts:
        p = as_tensor(p)
        s = list(p.data.shape)
        s.insert(axis, 1)
        expanded.append(reshape(p, tuple(s)))
    return concatenate(expanded, axis=axis)


def l2_norm(a, axis=None):
    a = as_tensor(a)
    return sqrt(sum(mul(a, a), axis=axis))


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, params, epsilon=1e-5):
    """Compare analytic gradients of f() against central finite differences.

    f is a deterministic callable returning a scalar Tensor computed from
    the current values of `params` (a sequence of leaf tensors). Returns
    the max over coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"grad_check: f returned shape {loss.data.shape}, expected a scalar")
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        aflat = analytic[pi].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(f().data)
            flat[i] = orig - epsilon
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            if not (np.isfinite(numeric) and np.isfinite(aflat[i])):
                raise GradCheckError(
                    f"non-finite value at parameter {pi}, coordinate {i}: "
                    f"analytic={aflat[i]}, numeric={numeric}")
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
