"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op result remembers its inputs and a backward rule. Results are stamped
with a monotonically increasing sequence number at creation, so the set of
nodes reachable from a loss, sorted by descending sequence number, is the
tape replayed in reverse: each node is visited only after all its consumers.
The graph is rebuilt on every forward pass, which lets itineraries and
behaviour sequences vary in length without padding.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, EmbeddingIndexError, InvalidArgumentError

_sequence = itertools.count()

BCE_EPS = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "grad_rows", "parents", "backward_fn", "seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        # rows that can be nonzero in .grad when it came only from gather, else None
        self.grad_rows: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.seq = next(_sequence)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgumentError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None
        self.grad_rows = None

    def backward(self) -> None:
        backward(self)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __mul__(self, other: float) -> Tensor:
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = fn
    return out


def _sum_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting by summing ``grad`` down to ``shape``."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# --------------------------------------------------------------------------
# ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a 2-D operand broadcasts against a stack of matrices."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if a.data.ndim == 3 and b.data.ndim == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul: batch sizes differ, {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        ga = _sum_to(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _sum_to(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad @ bd, (a, b), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may be a row vector broadcast over the rows of ``a``."""
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    if out.shape != a.shape and out.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_sum_to(g, sa), _sum_to(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise DimensionError(f"transpose needs at least 2 axes, got {a.shape}")
    return _result(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(src),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (the feature axis by default)."""
    if not parts:
        raise InvalidArgumentError("concat of an empty list")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].data.ndim
    ax = axis % ndim
    for p in parts:
        if p.data.ndim != ndim or any(
            p.shape[i] != parts[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: incompatible shapes {[q.shape for q in parts]} along axis {axis}"
            )
    out = np.concatenate([p.data for p in parts], axis=ax)
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, tuple(parts), fn)


def gather(table: Tensor, indices) -> Tensor:
    """Select rows of ``table``; the gradient flows only to the selected rows."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise EmbeddingIndexError(f"row index {int(bad)} out of range for {n} rows")
    return _result(table.data[idx], (table,), lambda g: (_RowGrad(idx, g),))


class _RowGrad:
    """Gradient that is nonzero only on a few rows; densified once per node."""

    __slots__ = ("idx", "values")

    def __init__(self, idx: np.ndarray, values: np.ndarray):
        self.idx = idx
        self.values = values


def _densify(parts: list, shape: tuple[int, ...]) -> np.ndarray:
    dense = None
    rows = [p for p in parts if isinstance(p, _RowGrad)]
    for p in parts:
        if not isinstance(p, _RowGrad):
            dense = p.copy() if dense is None else dense + p
    if rows:
        if dense is None:
            dense = np.zeros(shape)
        np.add.at(dense, np.concatenate([r.idx for r in rows]), np.concatenate([r.values for r in rows]))
    return dense


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _stable_sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.ndim == 0 or a.shape[axis] == 0:
        raise InvalidArgumentError(f"softmax over an empty axis (shape {a.shape})")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), fn)


def mean_rows(a: Tensor) -> Tensor:
    """Average over the leading axis, keeping it as a single row."""
    n = a.shape[0]
    if n == 0:
        raise InvalidArgumentError("mean over zero rows")
    return _result(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g, n, axis=0) / n,))


def total(a: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def bce(p: Tensor, labels) -> Tensor:
    """Elementwise binary cross entropy with probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != p.shape:
        y = np.broadcast_to(y, p.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidArgumentError(f"labels must be 0 or 1, got {np.unique(y)}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)

    def fn(g):
        return (g * inside * (pc - y) / (pc * (1.0 - pc)),)

    return _result(loss, (p,), fn)


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------


def tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that carry gradients, in reverse record order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node.parents)
    nodes.sort(key=lambda t: t.seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending: dict[int, list] = {id(loss): [np.ones_like(loss.data)]}
    for node in tape(loss):
        parts = pending.pop(id(node), None)
        if parts is None:
            continue
        g = _densify(parts, node.shape)
        if node.backward_fn is None:
            rows = None
            if all(isinstance(p, _RowGrad) for p in parts):
                rows = np.unique(np.concatenate([p.idx for p in parts]))
            if node.grad is None:
                node.grad, node.grad_rows = g, rows
            else:
                node.grad = node.grad + g
                if rows is None or node.grad_rows is None:
                    node.grad_rows = None
                else:
                    node.grad_rows = np.union1d(node.grad_rows, rows)
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pending.setdefault(id(parent), []).append(pg)
