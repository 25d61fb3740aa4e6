"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op appends a node to the active :class:`Tape`. A tape is
thread-local; ``with Tape() as tape:`` scopes a fresh one, otherwise each
thread uses a lazily created default tape.

    >>> x = tensor([1.0, 2.0], requires_grad=True)
    >>> backward((x * x).sum())
    >>> x.grad
    array([2., 4.])
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from . import kernels

DTYPE = np.float64

_state = threading.local()


class NumericError(FloatingPointError):
    """A forward op produced NaN or Inf."""


def _tls():
    if not hasattr(_state, "stack"):
        _state.stack = [Tape()]
        _state.grad_enabled = True
        _state.check_finite = True
    return _state


def current_tape() -> "Tape":
    return _tls().stack[-1]


def set_check_finite(flag: bool) -> None:
    """Toggle the per-op NaN/Inf check (on by default)."""
    _tls().check_finite = bool(flag)


@contextmanager
def no_grad():
    st = _tls()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


class Tape:
    """Ordered record of primitive ops; ``backward`` replays it in reverse."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tls().stack.append(self)
        return self

    def __exit__(self, *exc):
        _tls().stack.pop()
        return False

    def record(self, out, parents, vjp, op) -> int:
        self.nodes.append((out, parents, vjp, op))
        return len(self.nodes) - 1

    def reset(self):
        for out, _, _, _ in self.nodes:
            out._tape = None
            out.grad_id = None
        self.nodes = []

    def backward(self, loss: "Tensor", retain: bool = False):
        if not self.nodes:
            raise RuntimeError("backward called on an empty tape")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self or loss.grad_id is None:
            raise RuntimeError("loss was not recorded on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for idx in range(loss.grad_id, -1, -1):
            out, parents, vjp, _ = self.nodes[idx]
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad_id is None or parent._tape is not self:
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=DTYPE, copy=True).reshape(parent.shape)
                    else:
                        parent.grad += pg
                else:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
        if not retain:
            self.reset()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "grad_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self.grad_id = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        if self._tape is None:
            raise RuntimeError("tensor is not on a tape")
        self._tape.backward(self)

    # operators
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # method forms
    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad)


def ones(shape, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad)


def _make(data, parents, vjp, op: str) -> Tensor:
    st = _tls()
    if st.check_finite and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if st.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape = st.stack[-1]
        out._tape = tape
        out.grad_id = tape.record(out, parents, vjp, op)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def mul_scalar(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    return _make(x.data * s, (x,), lambda g: (g * s,), "mul_scalar")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    return _make(x.data ** p, (x,), lambda g: (g * p * x.data ** (p - 1),), "power")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    y = np.sqrt(x.data)
    return _make(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(x) -> Tensor:
    """``log(1 + exp(x))``, stable for large ``|x|``."""
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    return _make(y, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def arctan(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.arctan(x.data), (x,), lambda g: (g / (1.0 + x.data * x.data),), "arctan")


def relu(x) -> Tensor:
    x = as_tensor(x)
    m = x.data > 0
    return _make(x.data * m, (x,), lambda g: (g * m,), "relu")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick = a.data >= b.data
    return _make(np.where(pick, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)), "maximum")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick = a.data <= b.data
    return _make(np.where(pick, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)), "minimum")


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


# reductions and views

def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(data), (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul_scalar(sum_(x, axis, keepdims), 1.0 / max(n, 1))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    return _make(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def permute(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "permute")


def transpose_last(x) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def _has_array(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in idx)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    data = x.data[idx]
    fancy = _has_array(idx)

    def vjp(g):
        z = np.zeros(x.shape)
        if fancy:
            np.add.at(z, idx, g)
        else:
            z[idx] = np.reshape(g, np.shape(data))
        return (z,)

    return _make(np.array(data), (x,), vjp, "getitem")


def concat(xs, axis=0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        data = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in xs]}") from None
    splits = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _make(data, tuple(xs), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def stack(xs, axis=0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    data = np.stack([t.data for t in xs], axis=axis)
    return _make(data, tuple(xs),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))), "stack")


def roll(x, shifts, axes) -> Tensor:
    x = as_tensor(x)
    back = tuple(-s for s in shifts)
    return _make(np.roll(x.data, shifts, axes), (x,), lambda g: (np.roll(g, back, axes),), "roll")


# linear algebra and nn primitives

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ValueError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, (a, b), vjp, "matmul")


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("softmax over an empty last dimension")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("log_softmax over an empty last dimension")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def layer_norm(x, gain=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last dim, then apply optional affine ``gain``/``bias``."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n < 1:
        raise ValueError("layer_norm over an empty dimension")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    y = _make(xhat, (x,), vjp, "layer_norm")
    if gain is not None:
        y = mul(y, gain)
    if bias is not None:
        y = add(y, bias)
    return y


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B,C,H,W]`` with ``kernel[O,C,kh,kw]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} and kernel {kernel.shape} are incompatible")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    _, _, H, W = x.shape
    _, _, kh, kw = kernel.shape
    for extent, k in ((H, kh), (W, kw)):
        span = extent + 2 * padding - k
        if span < 0 or span % stride:
            raise ValueError(f"conv2d: extent {extent} with kernel {k}, stride {stride}, "
                             f"padding {padding} gives a non-integral output")
    out = kernels.conv2d_forward(x.data, kernel.data, int(stride), int(padding))
    y = _make(np.asarray(out), (x, kernel),
              lambda g: kernels.conv2d_backward(x.data, kernel.data, np.ascontiguousarray(g),
                                                int(stride), int(padding)),
              "conv2d")
    if bias is not None:
        y = add(y, reshape(bias, (1, -1, 1, 1)))
    return y


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    factor = int(factor)
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if factor == 1:
        return x
    data = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    *lead, H, W = x.shape

    def vjp(g):
        return (g.reshape(*lead, H, factor, W, factor).sum(axis=(-3, -1)),)

    return _make(data, (x,), vjp, "upsample_nearest")


# optimizer

def sgd_step(params, grads, lr: float, momentum: float, velocity):
    """Heavy-ball SGD in place: ``v <- momentum*v + g``; ``p <- p - lr*v``.

    ``params``, ``grads`` and ``velocity`` are parallel sequences of arrays;
    ``velocity`` entries are updated in place. Returns ``params``.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError("sgd_step: params, grads and velocity differ in length")
    for p, g, v in zip(params, grads, velocity):
        if g is None:
            continue
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"sgd_step: shape mismatch param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g
        p -= lr * v
    return params


class SGD:
    """Momentum SGD over named parameter tensors."""

    def __init__(self, params: dict, lr: float = 1e-3, momentum: float = 0.99):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        names = [k for k, t in self.params.items() if t.grad is not None]
        sgd_step([self.params[k].data for k in names], [self.params[k].grad for k in names],
                 self.lr, self.momentum, [self.velocity[k] for k in names])


def backward(loss: Tensor, retain: bool = False) -> None:
    """Populate ``.grad`` on every tracked leaf reachable from a scalar ``loss``."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        tape = current_tape()
        if not tape.nodes:
            raise RuntimeError("backward called on an empty tape")
        raise RuntimeError("loss is not on the active tape")
    loss._tape.backward(loss, retain=retain)
