"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation checks whether a :class:`Tape` is active and
whether any input requires a gradient.  If so, the output is recorded on the
tape together with a closure that maps the output gradient to input
gradients.  :meth:`Tape.backward` replays the records in reverse order.

Tapes are thread-local, so independent forward/backward passes may run on
separate threads as long as parameter updates are serialised by the caller.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError, DimensionError, EmptyAttentionError

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class IndexedGrad:
    """Gradient that is non-zero only at ``idx``; accumulated without a dense buffer per op."""

    __slots__ = ("idx", "values", "basic")

    def __init__(self, idx, values, basic):
        self.idx = idx
        self.values = values
        self.basic = basic


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of operations executed while the tape is active.

    Use as a context manager::

        with Tape() as tape:
            loss = model(batch)
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: "Tensor", inputs: Sequence["Tensor"], backward: Callable) -> int:
        self.nodes.append(_Node(out, tuple(inputs), backward))
        return len(self.nodes) - 1

    def backward(self, loss: "Tensor", grad: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        if loss.node is None or loss.node >= len(self.nodes) or self.nodes[loss.node].out is not loss:
            raise ValueError("loss was not produced on this tape")
        if grad is None:
            if loss.data.size != 1:
                raise DimensionError(f"backward needs a scalar loss or an explicit grad, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        loss._accumulate(np.asarray(grad, dtype=loss.data.dtype))
        for node in reversed(self.nodes[: loss.node + 1]):
            g = node.out.grad
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is not None and inp.requires_grad:
                    inp._accumulate(ig)


class no_grad:
    """Context manager that suspends recording on the current thread."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()
        return False


class Tensor:
    """A float array plus an optional gradient and tape handle."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g) -> None:
        if isinstance(g, IndexedGrad):
            if self.grad is None:
                self.grad = np.zeros(self.data.shape, dtype=self.data.dtype)
            if g.basic:
                self.grad[g.idx] += g.values
            else:
                np.add.at(self.grad, g.idx, g.values)
            return
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # operator sugar; the named functions below hold the rules
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def make_op(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op and record it if needed.

    ``backward(g)`` must return one gradient (or ``None``) per input.
    """
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = tape.record(out, inputs, backward)
    return out


def _same_shape(opname: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _shift(as_tensor(a), float(b))
    if not isinstance(a, Tensor):
        return _shift(b, float(a))
    _same_shape("add", a, b)
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return _shift(a, -float(b))
    _same_shape("sub", a, b)
    return make_op(a.data - b.data, (a, b), lambda g: (g, -g))


def _shift(a: Tensor, c: float) -> Tensor:
    return make_op(a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast along every leading axis of ``x``."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise DimensionError(f"add_bias: bias shape {b.shape} does not match trailing dim of {x.shape}")
    lead = tuple(range(x.ndim - 1))
    return make_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_op(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1 - y * y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, sub, mul, sigmoid, tanh, relu."""
    table = {"add": add, "sub": sub, "mul": mul, "sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported forms: ``[..., m, k] @ [k, n]`` (shared right operand) and
    ``[B..., m, k] @ [B..., k, n]`` (batched, equal leading dims).
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim != 2 and (a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    if bd.ndim == 2:
        def backward(g):
            da = g @ bd.T if a.requires_grad else None
            db = None
            if b.requires_grad:
                k, n = bd.shape
                db = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return da, db
    else:
        def backward(g):
            da = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
            db = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
            return da, db

    return make_op(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as ``[out, in]``."""
    y = matmul(x, transpose(w))
    return add_bias(y, b) if b is not None else y


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return make_op(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return make_op(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of length ``n`` at ``axis`` by repetition."""
    axis = axis if axis >= 0 else x.ndim + 1 + axis
    out = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return make_op(out, (x,), lambda g: (g.sum(axis=axis),))


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(x.dtype, copy=True),)

    return make_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic_index(idx)
    return make_op(np.array(x.data[idx]), (x,), lambda g: (IndexedGrad(idx, g, basic),))


def take_rows(x: Tensor, rows) -> Tensor:
    """``x[rows]`` for an integer index array along axis 0."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < -x.shape[0] or rows.max() >= x.shape[0]):
        raise DimensionError(f"take_rows: index out of range for shape {x.shape}")
    return getitem(x, rows)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: no tensors given")
    ref = tensors[0].shape
    ax = axis if axis >= 0 else len(ref) + axis
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: ragged non-axis dims {ref} vs {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return make_op(out, tensors, lambda g: tuple(np.split(g, bounds, axis=ax)))


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    ax = axis if axis >= 0 else x.ndim + axis
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of length {x.shape[ax]}")
    out, start = [], 0
    for s in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + s)
        out.append(getitem(x, tuple(sl)))
        start += s
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise DimensionError(f"stack: shape mismatch {ref} vs {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return make_op(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def embedding(table: Tensor, ids: np.ndarray, padding_idx: int | None = 0) -> Tensor:
    """Row lookup ``table[ids]``; the padding row never receives gradient."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise DimensionError(f"embedding: ids must be integers, got {ids.dtype}")
    dim = table.shape[1]

    flat = ids.reshape(-1)
    if padding_idx is not None:
        keep = flat != padding_idx
        flat = flat[keep]

    def backward(g):
        g = g.reshape(-1, dim)
        if padding_idx is not None:
            g = g[keep]
        return (IndexedGrad(flat, g, False),)

    return make_op(table.data[ids], (table,), backward)


# ---------------------------------------------------------------- attention


def softmax_masked(logits: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to positions where ``mask`` is true.

    Masked positions come out exactly zero and receive no gradient.
    """
    x = logits.data
    if mask is None:
        m = np.ones(x.shape, dtype=bool)
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=axis).all():
        raise EmptyAttentionError("softmax over an all-masked slice")
    z = np.where(m, x, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op(y, (logits,), backward)


# ---------------------------------------------------------------- regularisation


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit rng")
    keep = rng.random(x.shape) >= rate
    factor = (keep / (1.0 - rate)).astype(x.dtype)
    return make_op(x.data * factor, (x,), lambda g: (g * factor,))
