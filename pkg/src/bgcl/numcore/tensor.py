"""A small tape-based reverse-mode autodiff over numpy arrays.

Operations are recorded only inside an active :class:`Tape` and only when at
least one operand requires a gradient; outside a tape every op is a plain
numpy computation.
"""
import threading

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class TapeError(RuntimeError):
    pass


_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # identity hashing so tensors can key gradient maps
    __hash__ = object.__hash__

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
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; :meth:`backward` replays the adjoints once.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out, parents, vjp):
        if self.consumed:
            raise TapeError("tape already consumed")
        out._tape = self
        self.nodes.append(_Node(out, parents, vjp))

    def backward(self, root):
        return backward(root)


class Gradients:
    """Gradient map keyed by parameter tensor; unreached parameters give zeros."""

    def __init__(self, grads, leaves):
        self._grads = grads
        self._leaves = leaves

    def __getitem__(self, param):
        g = self._grads.get(id(param))
        if g is None:
            return np.zeros_like(param.data)
        return g

    def __contains__(self, param):
        return id(param) in self._grads

    def reached(self):
        return [t for t in self._leaves if id(t) in self._grads]

    def get(self, param, default=None):
        return self._grads.get(id(param), default)


def backward(root):
    """Reverse sweep from a scalar ``root``.

    Returns a :class:`Gradients` map from every leaf tensor with
    ``requires_grad`` to ``d root / d leaf``.
    """
    if not isinstance(root, Tensor):
        raise TypeError("root must be a Tensor")
    if root.data.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
    tape = root._tape
    if tape is None:
        raise TapeError("root was not produced on a tape")
    if tape.consumed:
        raise TapeError("tape already consumed")
    tape.consumed = True

    grads = {id(root): np.ones_like(root.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not isinstance(p, Tensor) or not p.requires_grad:
                continue
            if p._tape is None:
                leaves[id(p)] = p
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)
    out = {k: v for k, v in grads.items() if k in leaves}
    return Gradients(out, list(leaves.values()))


def grad(root, wrt):
    """Convenience wrapper: list of gradients of ``root`` for each tensor in ``wrt``."""
    g = backward(root)
    return [g[p] for p in wrt]


# ---------------------------------------------------------------- helpers

def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite output from {op}")
    return arr


def _make(data, parents, vjp, op):
    data = _check(np.asarray(data, dtype=np.float64), op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out._tape = None
    tape = _active_tape()
    need = tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out.requires_grad = need
    if need:
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    q = a.data / b.data
    return _make(q, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * q / b.data, b.shape)), "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p):
    """``a ** p`` for a constant real exponent."""
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def square(a):
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    m = a.data > 0
    return _make(np.where(m, a.data, 0.0), (a,), lambda g: (g * m,), "relu")


def prelu(a, slope):
    """Leaky rectifier with one learnable slope shared by all entries."""
    a, slope = as_tensor(a), as_tensor(slope)
    m = a.data > 0
    y = np.where(m, a.data, slope.data * a.data)
    return _make(y, (a, slope),
                 lambda g: (g * np.where(m, 1.0, slope.data),
                            _unbroadcast(np.where(m, 0.0, g * a.data), slope.shape)), "prelu")


def elu(a, alpha=1.0):
    a = as_tensor(a)
    m = a.data > 0
    ex = np.exp(np.minimum(a.data, 0.0))
    y = np.where(m, a.data, alpha * (ex - 1.0))
    return _make(y, (a,), lambda g: (g * np.where(m, 1.0, alpha * ex),), "elu")


def maximum(a, floor):
    """``max(a, floor)`` against a constant floor; gradient flows where ``a > floor``."""
    a = as_tensor(a)
    m = a.data > floor
    return _make(np.where(m, a.data, floor), (a,), lambda g: (g * m,), "maximum")


def clip(a, lo, hi):
    a = as_tensor(a)
    m = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * m,), "clip")


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    y = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(y, (a,), vjp, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a):
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(y, tuple(ts), vjp, "stack")


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in ts], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(y, tuple(ts), vjp, "concat")


def take_rows(a, index):
    """``a[index]`` along the first axis with an integer index array."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), vjp, "take_rows")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None), "matmul")


# ---------------------------------------------------------------- softmax family

def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    s = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
    y_keep = m + np.log(s)
    soft = np.exp(a.data - y_keep)
    y = y_keep if keepdims else np.squeeze(y_keep, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _make(y, (a,), vjp, "logsumexp")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    y = z - lse
    soft = np.exp(y)
    return _make(y, (a,), lambda g: (g - soft * np.sum(g, axis=axis, keepdims=True),), "log_softmax")


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),), "softmax")


def l2_norm(a, axis=-1, keepdims=True):
    """Euclidean norm along ``axis``."""
    a = as_tensor(a)
    n = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    y = n if keepdims else np.squeeze(n, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (g * a.data / safe,)

    return _make(y, (a,), vjp, "l2_norm")


# ---------------------------------------------------------------- special functions

def digamma(a):
    from .special import digamma as _dg, trigamma as _tg
    a = as_tensor(a)
    return _make(_dg(a.data), (a,), lambda g: (g * _tg(a.data),), "digamma")


def gammaln(a):
    from .special import digamma as _dg, gammaln as _gl
    a = as_tensor(a)
    return _make(_gl(a.data), (a,), lambda g: (g * _dg(a.data),), "gammaln")


def custom(data, parents, vjp, name="custom"):
    """Record an externally computed op; ``vjp(g)`` returns one grad per parent."""
    return _make(data, tuple(parents), vjp, name)
