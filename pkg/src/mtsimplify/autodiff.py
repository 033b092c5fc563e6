"""Minimal dense reverse-mode differentiation on top of numpy.

Every primitive computes its value eagerly in float64.  When a :class:`Tape`
is active and at least one input requires a gradient, the primitive also
records a backward closure on that tape.  Outside a tape, primitives are plain
value computations (this is how inference and finite differences run).

    >>> w = Tensor([[2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(matmul(w, Tensor([[3.0]])))
    >>> backward(loss, tape)
    >>> w.grad
    array([[3.]])
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "ContractError",
    "Tensor",
    "Tape",
    "backward",
    "zero_grad",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "sqrt_safe",
    "softmax",
    "concat",
    "stack",
    "reshape",
    "index",
    "sum_",
    "mean",
    "embedding",
    "gather",
    "scatter_add",
    "cross_entropy",
    "clip_by_global_norm",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a caller violates an operation's precondition."""


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


class _Node:
    __slots__ = ("out", "parents", "fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], fn: Callable):
        self.out = out
        self.parents = parents
        self.fn = fn


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; tapes are thread-local and may nest (the
    innermost one records).
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], fn: Callable) -> None:
        self.nodes.append(_Node(out, parents, fn))
        self._outputs.add(id(out))

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._outputs

    def reset(self) -> None:
        self.nodes.clear()
        self._outputs.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], fn: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape = _active_tape()
        if tape is not None:
            tape.record(out, parents, fn)
        else:
            out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every ancestor of ``loss`` recorded on ``tape``.

    Leaf gradients accumulate across calls until :func:`zero_grad`.  Gradients
    of intermediate tensors are recomputed from scratch on each call.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss not in tape:
        raise ContractError("loss was not produced on the given tape")
    for node in tape.nodes:
        node.out.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.out.grad
        if g is None:
            continue
        grads = node.fn(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            parent.grad = pg if parent.grad is None else parent.grad + pg


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt_safe(a, eps: float = 1e-12) -> Tensor:
    """Square root whose gradient is defined as 0 where the root is below ``eps``."""
    a = _as_tensor(a)
    y = np.sqrt(np.maximum(a.data, 0.0))

    def fn(g):
        safe = np.where(y < eps, 0.0, 0.5 / np.where(y < eps, 1.0, y))
        return (g * safe,)

    return _make(y, (a,), fn)


# linear algebra ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for operands of rank >= 2 (leading dims broadcast)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        y = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(y, (a, b), fn)


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Stable softmax.  ``mask`` (same shape, 1 = keep) zeroes excluded entries."""
    x = _as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty tensor")
    z = x.data
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        z = np.where(m, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _make(y, (x,), fn)


# structural ----------------------------------------------------------------


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    y = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, tuple(ts), fn)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in ts], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(y, tuple(ts), fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def index(x, idx) -> Tensor:
    x = _as_tensor(x)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.data[idx], (x,), fn)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (x,), fn)


def mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / n)


# indexing by id (copy mechanism plumbing) ----------------------------------


def embedding(weight: Tensor, ids) -> Tensor:
    """Rows of ``weight`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"embedding id out of range [0, {weight.shape[0]})")

    def fn(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _make(weight.data[ids], (weight,), fn)


def _row_index(idx: np.ndarray) -> tuple[np.ndarray, ...]:
    lead = np.indices(idx.shape, sparse=True)[:-1]
    return (*lead, idx)


def gather(x, idx) -> Tensor:
    """``out[..., j] = x[..., idx[..., j]]`` along the last axis."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    sel = _row_index(idx)

    def fn(g):
        full = np.zeros_like(x.data)
        np.add.at(full, sel, g)
        return (full,)

    return _make(x.data[sel], (x,), fn)


def scatter_add(src, idx, size: int) -> Tensor:
    """``out[..., idx[..., i]] += src[..., i]`` into a new last axis of ``size``.

    Repeated indices accumulate.
    """
    src = _as_tensor(src)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != src.shape:
        raise ShapeError(f"scatter_add index shape {idx.shape} != source shape {src.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise ContractError(f"scatter_add index out of range [0, {size})")
    sel = _row_index(idx)
    y = np.zeros(src.shape[:-1] + (size,))
    np.add.at(y, sel, src.data)
    return _make(y, (src,), lambda g: (g[sel],))


def cross_entropy(probs, target, floor: float = 1e-12) -> Tensor:
    """``-log(max(probs[..., target], floor))`` per leading position."""
    picked = gather(probs, np.asarray(target, dtype=np.int64)[..., None])
    p = picked.data
    clipped = np.maximum(p, floor)

    def fn(g):
        return (np.where(p > floor, -g[..., None] / clipped, 0.0),)

    return _make(-np.log(clipped[..., 0]), (picked,), fn)


# training utilities ----------------------------------------------------------


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float):
    """Scale ``grads`` jointly so their global L2 norm is at most ``max_norm``.

    Returns ``(clipped, norm)`` where ``norm`` is the pre-clipping norm.
    """
    if max_norm <= 0:
        raise ContractError("max_norm must be positive")
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm <= max_norm:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph from ``params`` on every call.  With
    ``max_coords`` set, that many coordinates are sampled per tensor.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    with Tape() as tape:
        loss = f()
    zero_grad(params)
    backward(loss, tape)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            up = float(f().data)
            flat[k] = orig - h
            down = float(f().data)
            flat[k] = orig
            num = (up - down) / (2 * h)
            err = abs(a.reshape(-1)[k] - num) / max(1e-8, abs(num))
            worst = max(worst, err)
    zero_grad(params)
    return worst
