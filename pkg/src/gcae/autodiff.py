"""Minimal reverse-mode automatic differentiation on top of numpy.

Every op records its parents and a backward closure on the output tensor; the
graph is implicit in those links and is discarded once the loss tensor goes out
of scope. Tensors default to float32; float64 inputs stay float64 so gradient
checks can run at double precision.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "NumericFault", "no_grad", "tensor", "backward",
    "add", "sub", "mul", "div", "neg", "matmul", "selu", "sigmoid", "softsign",
    "softplus", "exp", "log", "square", "clip", "sum", "mean", "reshape",
    "concat", "take", "mse", "bce", "bce_with_logits", "stop_gradient",
    "numerical_grad",
]

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Inputs to an op are not conformable."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")


class NumericFault(FloatingPointError):
    """An op produced NaN or Inf."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"non-finite output from {op}" + (f" ({detail})" if detail else ""))


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    elif dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(op, f"shape {data.shape}")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise binary ops (numpy broadcasting rules)

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape("add", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _make("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)
    return _make("div", out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return _make("matmul", out, (a, b), bw)


# ---------------------------------------------------------------------------
# elementwise unary ops

def selu(a: Tensor) -> Tensor:
    x = a.data
    # np.where is several times slower than this arithmetic form
    neg_exp = np.expm1(np.minimum(x, 0))
    neg_exp *= SELU_SCALE * SELU_ALPHA
    out = np.maximum(x, 0)
    out *= SELU_SCALE
    out += neg_exp

    def bw(g):
        d = neg_exp + SELU_SCALE * SELU_ALPHA
        d += np.multiply(x > 0, SELU_SCALE * (1.0 - SELU_ALPHA), dtype=x.dtype)
        return (g * d,)
    return _make("selu", out, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softsign(a: Tensor, scale: float = 1.0) -> Tensor:
    """``scale * x / (1 + |x|)``, bounded in (-scale, scale)."""
    x = a.data
    denom = 1.0 + np.abs(x)
    out = (scale * x / denom).astype(x.dtype, copy=False)
    return _make("softsign", out, (a,), lambda g: (g * (scale / denom**2).astype(x.dtype, copy=False),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.logaddexp(0, x).astype(x.dtype, copy=False)

    def bw(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (g * s,)
    return _make("softplus", out, (a,), bw)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _make("log", out, (a,), lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make("square", x * x, (a,), lambda g: (2.0 * g * x,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero wherever the clamp is active."""
    x = a.data
    out = np.clip(x, lo, hi)
    return _make("clip", out, (a,), lambda g: (g * ((x >= lo) & (x <= hi)),))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _expand_reduced(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    return _make("sum", np.asarray(out), (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),))


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.asarray(out).size, 1)
    return _make("mean", np.asarray(out, dtype=a.dtype), (a,),
                 lambda g: (_expand_reduced(g / count, a.shape, axis, keepdims).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))
    return _make("concat", out, tensors, bw)


def take(a: Tensor, index) -> Tensor:
    """Numpy-style indexing (basic or advanced)."""
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _make("take", np.array(out), (a,), bw)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# losses

def mse(pred: Tensor, target) -> Tensor:
    pred = _lift(pred)
    target = _lift(target, pred)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    return mean(square(sub(pred, target)))


def bce(prob: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps]."""
    prob = _lift(prob)
    target = _lift(target, prob)
    if prob.shape != target.shape:
        raise ShapeError("bce", prob.shape, target.shape)
    p = clip(prob, BCE_EPS, 1.0 - BCE_EPS)
    ll = add(mul(target, log(p)), mul(sub(1.0, target), log(sub(1.0, p))))
    return neg(mean(ll))


def bce_with_logits(logits: Tensor, target) -> Tensor:
    logits = _lift(logits)
    target = _lift(target, logits)
    if logits.shape != target.shape:
        raise ShapeError("bce_with_logits", logits.shape, target.shape)
    # -[t log s(l) + (1-t) log(1-s(l))] = softplus(l) - t*l
    return mean(sub(softplus(logits), mul(target, logits)))


# ---------------------------------------------------------------------------
# backward pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers. When ``leaves`` is
    given, unreachable leaves get a zero buffer and the list of their grads is
    returned.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    if leaves is None:
        return None
    out = []
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        out.append(leaf.grad)
    return out


def numerical_grad(fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``leaf.data``."""
    if not leaf.data.flags.c_contiguous:
        leaf.data = np.ascontiguousarray(leaf.data)
    grad = np.zeros_like(leaf.data, dtype=np.float64)
    flat = leaf.data.reshape(-1)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = fn().item()
            flat[k] = orig - h
            down = fn().item()
            flat[k] = orig
            grad.reshape(-1)[k] = (up - down) / (2 * h)
    return grad
