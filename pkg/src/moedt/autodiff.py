"""Dense-tensor arithmetic with reverse-mode differentiation.

Define-by-run graph over numpy arrays, in the micrograd style but batched:
each op computes its numpy result eagerly and records a closure that maps the
output gradient to parent-gradient contributions. backward() walks the graph
in reverse topological order with a single accumulator per node, accumulating
contributions in the order they arrive (child-first, index-ascending over
parents), so gradients are bit-reproducible run to run.

float32 is the training dtype; float64 is used for finite-difference checking
(grad_check). Ops never mutate their inputs; leaves are mutated only between
graph builds (by the optimizer or by grad_check probes).
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng as _rng
from .errors import GradCheckError, NonScalarLossError, NumericsError, ShapeError

# When True every op asserts its output is finite. Enabled by the test suite;
# off by default to keep training loops lean.
DEBUG_CHECKS = False

_GRAD_ENABLED = True

# Additive mask value: exp(-1e9) underflows to exactly 0.0 in both float32 and
# float64, so masked attention weights (and their analytic gradients) are
# exact zeros rather than merely small.
MASK_VALUE = -1e9


class no_grad:
    """Context manager that disables graph building (fast eval path)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.data = data
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Create a leaf tensor. Copies the input so leaves own their storage."""
    arr = np.array(data, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def constant(data, dtype=np.float32) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=False)


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _finite(op: str, arr: np.ndarray) -> None:
    if DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op}: non-finite values in output")


def _node(op: str, out: np.ndarray, parents: tuple, backward) -> Tensor:
    _finite(op, out)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, parents=parents, backward=backward)
    return Tensor(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast relative to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape)

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(g, b.data.shape))

    return _node("add", out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape)

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(-g, b.data.shape))

    return _node("sub", out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape)

    def bw(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node("mul", out, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * a.data.dtype.type(s)

    def bw(g, acc):
        acc(a, g * a.data.dtype.type(s))

    return _node("scale", out, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g, acc):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            acc(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            acc(b, _unbroadcast(gb, b.data.shape))

    return _node("matmul", out, (a, b), bw)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape))

    def bw(g, acc):
        acc(a, g.reshape(a.data.shape))

    return _node("reshape", out, (a,), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def bw(g, acc):
        acc(a, np.transpose(g, inv))

    return _node("transpose", out, (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of `length` entries along `axis`, starting at `start`."""
    size = a.data.shape[axis]
    if start < 0 or length < 1 or start + length > size:
        raise ShapeError("narrow", a.shape, (axis, start, length))
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index]

    def bw(g, acc):
        ga = np.zeros_like(a.data)
        ga[index] = g
        acc(a, ga)

    return _node("narrow", out, (a,), bw)


def take(a: Tensor, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along `axis` with an integer index array.

    Covers both embedding lookup (axis 0, 2-D idx into a table) and position
    selection (axis 1, 1-D idx). Duplicate indices accumulate gradient.
    """
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[axis]):
        raise ShapeError("take", a.shape, (axis, int(idx.min()), int(idx.max())))
    out = np.take(a.data, idx, axis=axis)

    def bw(g, acc):
        ga = np.zeros_like(a.data)
        np.add.at(np.moveaxis(ga, axis, 0), idx, np.moveaxis(g, axis, 0) if idx.ndim == 1 else g)
        acc(a, ga)

    return _node("take", out, (a,), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("stack", ())
    shapes = {t.data.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *[t.shape for t in tensors])
    out = np.stack([t.data for t in tensors], axis=axis)
    parents = tuple(tensors)

    def bw(g, acc):
        for i, t in enumerate(parents):
            if t.requires_grad:
                acc(t, np.take(g, i, axis=axis))

    return _node("stack", out, parents, bw)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw(g, acc):
        acc(a, np.full(a.data.shape, g, dtype=a.data.dtype))

    return _node("sum_all", out, (a,), bw)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g, acc):
        gg = g if keepdims else np.expand_dims(g, axis)
        acc(a, np.broadcast_to(gg, a.data.shape).copy())

    return _node("sum_axis", out, (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    # subgradient at exactly 0 is taken as 0
    mask = a.data > 0

    def bw(g, acc):
        acc(a, g * mask)

    return _node("relu", out, (a,), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation (the GPT-2 form)."""
    x = a.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (x + k * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g, acc):
        dinner = c * (1.0 + 3.0 * k * x * x)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        acc(a, g * da.astype(x.dtype, copy=False))

    return _node("gelu", out, (a,), bw)


def tanh_(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g, acc):
        acc(a, g * (1.0 - out * out))

    return _node("tanh", out, (a,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g, acc):
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            acc(x, term * inv)
        if gain.requires_grad:
            acc(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            acc(bias, _unbroadcast(g, bias.data.shape))

    return _node("layer_norm", out, (x, gain, bias), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        inner = (g * y).sum(axis=axis, keepdims=True)
        acc(a, y * (g - inner))

    return _node("softmax", y, (a,), bw)


def topk_softmax(a: Tensor, k: int, axis: int = -1) -> Tensor:
    """Softmax restricted to the k largest entries along `axis`.

    Non-selected entries get weight exactly 0.0 and receive exactly zero
    gradient. Ties are broken toward the lower index (stable sort).
    """
    x = a.data
    n = x.shape[axis]
    if not 1 <= k <= n:
        raise ShapeError("topk_softmax", a.shape, (k,))
    order = np.argsort(-x, axis=axis, kind="stable")
    top = np.take(order, np.arange(k), axis=axis)
    mask = np.zeros(x.shape, dtype=x.dtype)
    np.put_along_axis(mask, top, x.dtype.type(1.0), axis=axis)
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m) * mask
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g, acc):
        inner = (g * y).sum(axis=axis, keepdims=True)
        # y is exactly 0 off the selected set, so those entries get grad 0
        acc(a, y * (g - inner))

    return _node("topk_softmax", y, (a,), bw)


def dropout(a: Tensor, p: float, key: tuple, train: bool) -> Tensor:
    """Inverted dropout with a counter-based deterministic mask.

    `key` is an integer tuple (seed, step, site); the same key always yields
    the same mask. Identity when eval or p == 0.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    gen = _rng.stream(_rng.DROPOUT, *key)
    keep = (gen.random(a.data.shape) >= p)
    m = keep.astype(a.data.dtype) * a.data.dtype.type(1.0 / (1.0 - p))
    out = a.data * m

    def bw(g, acc):
        acc(a, g * m)

    return _node("dropout", out, (a,), bw)


# ---------------------------------------------------------------------------
# backward pass


def _topo(root: Tensor) -> list:
    order: list = []
    visited: set = set()
    stack: list = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # parents appear before children


def backward(loss: Tensor) -> dict:
    """Gradients of a scalar loss w.r.t. every reachable requires_grad leaf.

    Returns {leaf Tensor: ndarray}. Leaves not touched by the graph are
    absent (the documented choice: absent rather than zeros).
    """
    if loss.data.shape != ():
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict = {}
    leaf_grads: dict = {}

    def acc(t, contrib):
        prev = grads.get(t)
        grads[t] = contrib if prev is None else prev + contrib

    grads[loss] = np.ones((), dtype=loss.data.dtype)
    for node in reversed(_topo(loss)):
        g = grads.pop(node, None)
        if g is None:
            continue
        _finite("backward", g)
        if node._backward is not None:
            node._backward(g, acc)
        elif node.requires_grad and not node._parents:
            leaf_grads[node] = g
    return leaf_grads


def forward_backward(loss_fn: Callable[[], Tensor], params) -> tuple:
    """Run loss_fn, backprop, and key gradients by parameter name.

    `params` is a ParamSet. Trainable parameters not touched by the loss are
    absent from the result.
    """
    loss = loss_fn()
    by_tensor = backward(loss)
    out = {}
    for name, t in params.items():
        if t in by_tensor and params.is_trainable(name):
            out[name] = by_tensor[t]
    return float(loss.data), out


def grad_check(loss_fn: Callable[[], Tensor], params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every coordinate of every trainable parameter, so only suitable
    for small models. Requires float64 parameters.
    """
    if eps <= 0:
        raise GradCheckError(f"eps must be positive, got {eps}")
    for name, t in params.items():
        if params.is_trainable(name) and t.data.dtype != np.float64:
            raise GradCheckError(f"grad_check requires float64 params; {name} is {t.data.dtype}")
    _, grads = forward_backward(loss_fn, params)
    max_rel = 0.0
    for name, t in params.items():
        if not params.is_trainable(name):
            continue
        flat = t.data.reshape(-1)
        analytic = grads.get(name, np.zeros_like(t.data)).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            rel = abs(float(analytic[i]) - fd) / max(1.0, abs(fd))
            if rel > max_rel:
                max_rel = rel
    return max_rel
