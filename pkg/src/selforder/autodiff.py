"""Minimal reverse-mode differentiation over dense 2-D float64 matrices.

Every value is a ``(rows, cols)`` array.  Binary elementwise operations
broadcast the way numpy does for 2-D operands (``1 x D`` against ``N x D``,
``N x 1`` against ``1 x N`` and so on) and reduce gradients back to the
operand shape.

Typical use::

    w = Node(rng.normal(size=(3, 4)), requires_grad=True)
    loss = sum_all(relu(matmul(x, w)))
    backward(loss)
    w.grad
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, ParameterError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Node:
    """A matrix value in a computation graph."""

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "_backward")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        *,
        parents: tuple[Node, ...] = (),
        op: str = "leaf",
        backward: BackwardFn | None = None,
    ):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise DimensionError(f"expected a 2-D value, got shape {value.shape}")
        if op == "leaf" and not np.all(np.isfinite(value)):
            raise ParameterError("leaf values must be finite")
        self.value = value
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self) -> Node:
        return transpose(self)


def as_node(x) -> Node:
    """Wrap constants; nodes pass through unchanged."""
    if isinstance(x, Node):
        return x
    return Node(x)


def _make(value: np.ndarray, parents: Iterable[Node], op: str, backward: BackwardFn) -> Node:
    parents = tuple(parents)
    requires = any(p.requires_grad for p in parents)
    return Node(value, requires, parents=parents, op=op, backward=backward if requires else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), "add", bw)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), "sub", bw)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(a.value * b.value, (a, b), "mul", bw)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")
    out = a.value / b.value

    def bw(g):
        ga = g / b.value
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), "div", bw)


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), "matmul", bw)


# ---------------------------------------------------------------------------
# elementwise unary


def scale(x, c: float) -> Node:
    x = as_node(x)
    c = float(c)
    return _make(x.value * c, (x,), "scale", lambda g: (g * c,))


def square(x) -> Node:
    x = as_node(x)
    return _make(x.value * x.value, (x,), "square", lambda g: (2.0 * g * x.value,))


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), "relu", lambda g: (g * mask,))


def exp(x) -> Node:
    x = as_node(x)
    out = np.exp(x.value)
    return _make(out, (x,), "exp", lambda g: (g * out,))


def log(x) -> Node:
    x = as_node(x)
    return _make(np.log(x.value), (x,), "log", lambda g: (g / x.value,))


def sigmoid_temp(x, tau: float) -> Node:
    """Elementwise ``1 / (1 + exp(-x / tau))``."""
    if not tau > 0:
        raise ParameterError(f"sigmoid temperature must be positive, got {tau}")
    x = as_node(x)
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(x.value / (2.0 * tau)))

    def bw(g):
        return (g * out * (1.0 - out) / tau,)

    return _make(out, (x,), "sigmoid_temp", bw)


# ---------------------------------------------------------------------------
# shape / reductions


def transpose(x) -> Node:
    x = as_node(x)
    return _make(x.value.T.copy(), (x,), "transpose", lambda g: (g.T,))


def slice_rows(x, start: int, stop: int) -> Node:
    x = as_node(x)
    if not 0 <= start < stop <= x.rows:
        raise DimensionError(f"row slice [{start}:{stop}] out of range for {x.shape}")

    def bw(g):
        full = np.zeros_like(x.value)
        full[start:stop] = g
        return (full,)

    return _make(x.value[start:stop].copy(), (x,), "slice_rows", bw)


def concat_rows(xs: Sequence) -> Node:
    xs = [as_node(x) for x in xs]
    if not xs:
        raise DimensionError("concat_rows of nothing")
    cols = xs[0].cols
    if any(x.cols != cols for x in xs):
        raise DimensionError("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [x.rows for x in xs])

    def bw(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _make(np.vstack([x.value for x in xs]), xs, "concat_rows", bw)


def sum_all(x) -> Node:
    x = as_node(x)
    return _make(np.array([[x.value.sum()]]), (x,), "sum", lambda g: (np.full_like(x.value, g[0, 0]),))


def mean_all(x) -> Node:
    x = as_node(x)
    n = x.value.size
    return _make(
        np.array([[x.value.mean()]]), (x,), "mean", lambda g: (np.full_like(x.value, g[0, 0] / n),)
    )


def sum_rows(x) -> Node:
    """Sum each row: ``N x D -> N x 1``."""
    x = as_node(x)
    return _make(
        x.value.sum(axis=1, keepdims=True), (x,), "sum_rows", lambda g: (np.broadcast_to(g, x.shape).copy(),)
    )


def sum_cols(x) -> Node:
    """Sum each column: ``N x D -> 1 x D``."""
    x = as_node(x)
    return _make(
        x.value.sum(axis=0, keepdims=True), (x,), "sum_cols", lambda g: (np.broadcast_to(g, x.shape).copy(),)
    )


def maxpool_cols(f) -> Node:
    """Column-wise maximum ``N x D -> 1 x D``.

    The gradient of column ``j`` goes to the lowest-index row attaining the
    maximum.
    """
    f = as_node(f)
    if f.rows < 1:
        raise DimensionError("maxpool_cols of an empty matrix")
    idx = np.argmax(f.value, axis=0)
    cols = np.arange(f.cols)

    def bw(g):
        out = np.zeros_like(f.value)
        out[idx, cols] = g[0]
        return (out,)

    return _make(f.value[idx, cols][None, :], (f,), "maxpool_cols", bw)


def prefix_maxpool(f, sizes: Sequence[int]) -> Node:
    """Row ``k`` of the result is ``maxpool_cols(f[:sizes[k]])``."""
    f = as_node(f)
    sizes = [int(s) for s in sizes]
    if not sizes or min(sizes) < 1 or max(sizes) > f.rows:
        raise DimensionError(f"prefix sizes {sizes} invalid for {f.rows} rows")
    cols = np.arange(f.cols)
    idx = [np.argmax(f.value[:s], axis=0) for s in sizes]
    out = np.vstack([f.value[i, cols] for i in idx])

    def bw(g):
        grad = np.zeros_like(f.value)
        for k, i in enumerate(idx):
            np.add.at(grad, (i, cols), g[k])
        return (grad,)

    return _make(out, (f,), "prefix_maxpool", bw)


def logsumexp_rows(x) -> Node:
    """Stable ``log(sum(exp(x), axis=1))`` as an ``N x 1`` column."""
    x = as_node(x)
    m = x.value.max(axis=1, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    return _make(out, (x,), "logsumexp_rows", lambda g: (g * soft,))


def l2_normalize_rows(x, eps: float = 1e-12) -> Node:
    x = as_node(x)
    norm = np.maximum(np.sqrt((x.value * x.value).sum(axis=1, keepdims=True)), eps)
    y = x.value / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _make(y, (x,), "l2_normalize_rows", bw)


def soft_gather(weights, x) -> Node:
    """Rows of ``x`` re-weighted by the columns of ``weights``: ``weights.T @ x``."""
    return matmul(transpose(weights), x)


def stop_gradient(x) -> Node:
    x = as_node(x)
    return Node(x.value.copy(), op="stop_gradient")


def custom(value: np.ndarray, parents: Sequence, op: str, backward: BackwardFn) -> Node:
    """Register an operation implemented outside this module.

    ``backward`` receives the output gradient and returns one gradient (or
    ``None``) per parent.
    """
    return _make(np.asarray(value, dtype=np.float64), [as_node(p) for p in parents], op, backward)


# ---------------------------------------------------------------------------


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``.

    Gradients of reachable nodes are reset first, so calling this twice does
    not double-count.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
    order = _topological(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = parent.grad + g
