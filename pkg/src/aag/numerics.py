"""Dense tensors, differentiable kernels, and a finite-difference checker.

Reverse-mode autodiff over a recorded operation graph: every kernel returns
a Tensor holding references to its inputs and a closure that maps the
output gradient to input gradients. The kernel set is fixed: it covers
exactly what the anticipation architecture needs, no general broadcasting.

Precision is a process-global switch: float32 for training, float64 for
gradient checks (`set_precision` / the `precision` context manager).
Tensors are immutable once produced by a kernel; every kernel validates
that its output is finite and raises NumericsError otherwise.
"""

import math
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DataError, NumericsError, ShapeError, UsageError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_dtype = np.float32

_local = threading.local()


def _grad_enabled():
    return getattr(_local, "grad_enabled", True)


def set_precision(mode):
    """Switch the global dtype: "float32" (training) or "float64" (checks)."""
    global _dtype
    if mode == "float32":
        _dtype = np.float32
    elif mode == "float64":
        _dtype = np.float64
    else:
        raise ConfigError(f"unknown precision mode: {mode!r}")


def active_dtype():
    return _dtype


@contextmanager
def precision(mode):
    """Temporarily switch precision. Do not mix dtypes within one model."""
    global _dtype
    previous = _dtype
    set_precision(mode)
    try:
        yield
    finally:
        _dtype = previous


@contextmanager
def no_grad():
    """Disable graph recording in this thread (pure forward evaluation)."""
    previous = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """Row-major dense array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._vjp = None

    @classmethod
    def _wrap(cls, data, parents=(), vjp=None, op=""):
        if not np.all(np.isfinite(data)):
            raise NumericsError(f"non-finite values produced by {op or 'op'}")
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        if _grad_enabled() and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._vjp = vjp
        else:
            t.requires_grad = False
            t._parents = ()
            t._vjp = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter:
    """Named trainable tensor with a persistent gradient buffer."""

    __slots__ = ("name", "value")

    def __init__(self, name, data):
        self.name = name
        self.value = data if isinstance(data, Tensor) else Tensor(data)
        self.value.requires_grad = True
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def grad(self):
        t = Tensor.__new__(Tensor)
        t.data = self.value.grad
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._vjp = None
        return t

    def zero_grad(self):
        self.value.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def zero_grads(params):
    for p in params:
        p.zero_grad()


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# kernels


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._wrap(out, (a, b), vjp, "matmul")


def transpose(a):
    out = a.data.T

    def vjp(g):
        return (g.T,)

    return Tensor._wrap(out, (a,), vjp, "transpose")


def add(a, b):
    """Elementwise sum; b may be a (1, D) row broadcast over a's rows."""
    if a.shape == b.shape:
        broadcast = False
    elif a.ndim == 2 and b.ndim == 2 and b.shape == (1, a.shape[1]):
        broadcast = True
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    out = a.data + b.data

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if broadcast else g
        return g, gb

    return Tensor._wrap(out, (a, b), vjp, "add")


def mul(a, b):
    """Elementwise product, same shapes."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")
    out = a.data * b.data

    def vjp(g):
        return g * b.data, g * a.data

    return Tensor._wrap(out, (a, b), vjp, "mul")


def scale(a, s):
    """Multiply by a python scalar."""
    s = _dtype(s)
    out = a.data * s

    def vjp(g):
        return (g * s,)

    return Tensor._wrap(out, (a,), vjp, "scale")


def softmax(x, axis=-1):
    """Numerically stabilized softmax along `axis` (max subtracted per slice)."""
    if x.ndim == 0 or axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax: invalid axis {axis} for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor._wrap(y, (x,), vjp, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each row of x to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _dtype(eps))
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def vjp(g):
        dgamma = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        dbeta = g.sum(axis=tuple(range(g.ndim - 1)))
        dxhat = g * gamma.data
        # d/dx of (x - mean)/std, folding the mean and variance paths
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return Tensor._wrap(out, (x, gamma, beta), vjp, "layer_norm")


def gelu(x):
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * phi_cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (phi_cdf + x.data * pdf),)

    return Tensor._wrap(out, (x,), vjp, "gelu")


def relu(x):
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return Tensor._wrap(out, (x,), vjp, "relu")


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of `labels` under softmax(logits).

    logits: (B, C); labels: length-B integer array. Computed through
    log-sum-exp; the gradient is (softmax - onehot) / B.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy: expected {b} labels, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"cross_entropy: label {labels[i]} out of range [0, {c}) at sample {i}")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    losses = lse - logits.data[np.arange(b), labels]
    out = np.asarray(losses.mean(), dtype=_dtype)

    def vjp(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        return (p * (g / b),)

    return Tensor._wrap(out, (logits,), vjp, "cross_entropy")


def concat_rows(parts):
    """Stack 2-D tensors of equal width along axis 0."""
    parts = tuple(parts)
    if not parts:
        raise UsageError("concat_rows: empty input")
    width = parts[0].shape[-1]
    for p in parts:
        if p.ndim != 2 or p.shape[1] != width:
            raise ShapeError(f"concat_rows: widths differ ({p.shape} vs width {width})")
    out = np.concatenate([p.data for p in parts], axis=0)
    row_counts = [p.shape[0] for p in parts]

    def vjp(g):
        grads = []
        offset = 0
        for n in row_counts:
            grads.append(g[offset : offset + n])
            offset += n
        return tuple(grads)

    return Tensor._wrap(out, parts, vjp, "concat_rows")


def concat_cols(parts):
    """Stack 2-D tensors with equal row counts along axis 1."""
    parts = tuple(parts)
    if not parts:
        raise UsageError("concat_cols: empty input")
    rows = parts[0].shape[0]
    for p in parts:
        if p.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({p.shape} vs {rows} rows)")
    out = np.concatenate([p.data for p in parts], axis=1)
    col_counts = [p.shape[1] for p in parts]

    def vjp(g):
        grads = []
        offset = 0
        for n in col_counts:
            grads.append(g[:, offset : offset + n])
            offset += n
        return tuple(grads)

    return Tensor._wrap(out, parts, vjp, "concat_cols")


def slice_cols(a, start, stop):
    out = a.data[:, start:stop]

    def vjp(g):
        da = np.zeros_like(a.data)
        da[:, start:stop] = g
        return (da,)

    return Tensor._wrap(out, (a,), vjp, "slice_cols")


def mean_rows(a):
    """Mean over rows: (L, D) -> (1, D)."""
    n = a.shape[0]
    out = a.data.mean(axis=0, keepdims=True)

    def vjp(g):
        return (np.repeat(g / n, n, axis=0),)

    return Tensor._wrap(out, (a,), vjp, "mean_rows")


def sum_all(a):
    out = np.asarray(a.data.sum(), dtype=_dtype)

    def vjp(g):
        return (np.full_like(a.data, g),)

    return Tensor._wrap(out, (a,), vjp, "sum_all")


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's grad buffer.

    Repeated calls without zero_grad add up. Raises UsageError for a
    non-scalar loss.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            existing = grads.get(id(parent))
            if existing is None:
                # A vjp may hand the same array to several parents (add
                # passes g straight through), so the accumulator must own
                # a private copy before any in-place += can touch it.
                grads[id(parent)] = pg.copy()
            else:
                existing += pg


# ---------------------------------------------------------------------------
# finite differences


def max_relative_error(analytic, numeric):
    """max over entries of |a - n| / max(1e-12, |a| + |n|)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-12, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom))


def finite_diff_gradients(forward_fn, params, eps):
    """Central-difference gradients of forward_fn() w.r.t. every entry.

    forward_fn must be deterministic and return a scalar Tensor; it is
    re-evaluated 2x per parameter entry with recording disabled.
    """
    if eps <= 0:
        raise ConfigError(f"finite_diff_gradients: eps must be positive, got {eps}")
    numeric = {}
    with no_grad():
        for p in params:
            flat = p.value.data.reshape(-1)
            grad = np.zeros_like(flat)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + eps
                f_plus = forward_fn().item()
                flat[i] = saved - eps
                f_minus = forward_fn().item()
                flat[i] = saved
                grad[i] = (f_plus - f_minus) / (2.0 * eps)
            numeric[p.name] = grad.reshape(p.value.shape)
    return numeric


def finite_diff_check(forward_fn, params, eps=1e-5):
    """Max relative error between analytic and central-difference gradients."""
    params = list(params)
    zero_grads(params)
    loss = forward_fn()
    backward(loss)
    analytic = {p.name: p.value.grad.copy() for p in params}
    numeric = finite_diff_gradients(forward_fn, params, eps)
    worst = 0.0
    for p in params:
        worst = max(worst, max_relative_error(analytic[p.name], numeric[p.name]))
    return worst
