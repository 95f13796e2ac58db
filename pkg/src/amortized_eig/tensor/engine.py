"""Tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Graph` is an append-only list of primitive records. Every
:class:`Tensor` produced from at least one recorded input is itself
recorded; tensors without a graph are constants and carry no gradient.
Primitives live in a registry so that :func:`forward_primitive` and the
finite-difference checker can address them by tag.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible input shapes."""


class Tensor:
    """Dense real array, optionally attached to a differentiation graph."""

    __slots__ = ("data", "graph", "node")
    __array_priority__ = 100.0

    def __init__(self, data, graph: "Graph | None" = None, node: int | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.graph = graph
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; every method routes through the primitive registry
    def __add__(self, other):
        return forward_primitive(None, "add", [self, other])

    def __radd__(self, other):
        return forward_primitive(None, "add", [other, self])

    def __sub__(self, other):
        return forward_primitive(None, "subtract", [self, other])

    def __rsub__(self, other):
        return forward_primitive(None, "subtract", [other, self])

    def __mul__(self, other):
        return forward_primitive(None, "multiply", [self, other])

    def __rmul__(self, other):
        return forward_primitive(None, "multiply", [other, self])

    def __truediv__(self, other):
        return forward_primitive(None, "divide", [self, other])

    def __rtruediv__(self, other):
        return forward_primitive(None, "divide", [other, self])

    def __neg__(self):
        return forward_primitive(None, "negate", [self])

    def __matmul__(self, other):
        return forward_primitive(None, "matmul", [self, other])

    def __getitem__(self, index):
        return forward_primitive(None, "slice", [self], index=index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return forward_primitive(None, "reshape", [self], shape=shape)

    def sum(self, axis=None, keepdims=False):
        return forward_primitive(None, "sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return forward_primitive(None, "mean", [self], axis=axis, keepdims=keepdims)


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    saved: Any
    attrs: dict
    shape: tuple[int, ...]


@dataclass
class Graph:
    """Append-only tape. Rebuilt for every training step."""

    nodes: list[Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def leaf(self, array) -> Tensor:
        data = np.asarray(array, dtype=DTYPE)
        self.nodes.append(Node("leaf", (), None, {}, data.shape))
        return Tensor(data, self, len(self.nodes) - 1)

    def _record(self, op, input_nodes, saved, attrs, out) -> Tensor:
        self.nodes.append(Node(op, tuple(input_nodes), saved, attrs, out.shape))
        return Tensor(out, self, len(self.nodes) - 1)

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Populate gradients for every ancestor of the scalar ``loss``."""
        if loss.graph is not self or loss.node is None:
            raise ValueError("loss is not a node of this graph")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape, dtype=DTYPE)}
        for idx in range(loss.node, -1, -1):
            g = grads.get(idx)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.op == "leaf":
                continue
            in_grads = PRIMITIVES[node.op].backward(g, node.saved, **node.attrs)
            for parent, pg in zip(node.inputs, in_grads):
                if parent is None or pg is None:
                    continue
                prev = grads.get(parent)
                grads[parent] = pg if prev is None else prev + pg
        self.grads = grads
        return grads

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the last backward pass with respect to ``tensor``."""
        if tensor.node is None:
            raise ValueError("constant tensors have no gradient")
        g = self.grads.get(tensor.node)
        return np.zeros(tensor.shape, dtype=DTYPE) if g is None else g


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    backward: Callable[..., Sequence[np.ndarray | None]]


PRIMITIVES: dict[str, Primitive] = {}


def primitive(name: str):
    """Register a ``(forward, backward)`` pair under ``name``.

    The decorated callable returns the pair; it is invoked once at import.
    """

    def deco(builder):
        fwd, bwd = builder()
        PRIMITIVES[name] = Primitive(name, fwd, bwd)
        return builder

    return deco


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def forward_primitive(graph: Graph | None, op: str, inputs: Sequence, **attrs) -> Tensor:
    """Evaluate primitive ``op`` and record it when any input is on a graph."""
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise KeyError(f"unknown primitive {op!r}")
    tensors = [as_tensor(x) for x in inputs]
    if graph is None:
        for t in tensors:
            if t.graph is not None:
                graph = t.graph
                break
    for t in tensors:
        if t.graph is not None and t.graph is not graph:
            raise ValueError(f"{op}: inputs belong to different graphs")
    out, saved = prim.forward(*[t.data for t in tensors], **attrs)
    out = np.asarray(out, dtype=DTYPE)
    if graph is None or all(t.node is None for t in tensors):
        return Tensor(out)
    return graph._record(op, [t.node for t in tensors], saved, attrs, out)


# ---------------------------------------------------------------- helpers


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ------------------------------------------------------------- arithmetic


def _binary(name, fn, grad_a, grad_b):
    def fwd(a, b):
        _check_broadcast(name, a, b)
        return fn(a, b), (a, b)

    def bwd(g, saved):
        a, b = saved
        return _unbroadcast(grad_a(g, a, b), a.shape), _unbroadcast(grad_b(g, a, b), b.shape)

    return fwd, bwd


primitive("add")(lambda: _binary("add", np.add, lambda g, a, b: g, lambda g, a, b: g))
primitive("subtract")(lambda: _binary("subtract", np.subtract, lambda g, a, b: g, lambda g, a, b: -g))
primitive("multiply")(
    lambda: _binary("multiply", np.multiply, lambda g, a, b: g * b, lambda g, a, b: g * a)
)
primitive("divide")(
    lambda: _binary(
        "divide", np.divide, lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)
    )
)


def _unary(fn, dfn):
    """``dfn(g, x, y)`` returns the input gradient given output ``y``."""

    def fwd(x):
        y = fn(x)
        return y, (x, y)

    def bwd(g, saved):
        x, y = saved
        return (dfn(g, x, y),)

    return fwd, bwd


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


primitive("negate")(lambda: _unary(np.negative, lambda g, x, y: -g))
primitive("exp")(lambda: _unary(np.exp, lambda g, x, y: g * y))
primitive("log")(lambda: _unary(np.log, lambda g, x, y: g / x))
primitive("sqrt")(lambda: _unary(np.sqrt, lambda g, x, y: g * 0.5 / y))
primitive("tanh")(lambda: _unary(np.tanh, lambda g, x, y: g * (1.0 - y * y)))
primitive("relu")(lambda: _unary(lambda x: np.maximum(x, 0.0), lambda g, x, y: g * (x > 0)))
primitive("softplus")(lambda: _unary(_softplus, lambda g, x, y: g * _sigmoid(x)))
primitive("sigmoid")(lambda: _unary(_sigmoid, lambda g, x, y: g * y * (1.0 - y)))


@primitive("matmul")
def _matmul():
    def fwd(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
        if b.ndim == 2 and a.ndim > 2:
            # a shared weight matrix: one flat GEMM instead of a batched one
            k = a.shape[-1]
            return (a.reshape(-1, k) @ b).reshape(a.shape[:-1] + b.shape[-1:]), (a, b)
        return a @ b, (a, b)

    def bwd(g, saved):
        a, b = saved
        if b.ndim == 2 and a.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.T).reshape(a.shape)
            return ga, a.reshape(-1, a.shape[-1]).T @ g2
        return _unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)

    return fwd, bwd


# ------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@primitive("sum")
def _sum():
    def fwd(x, axis=None, keepdims=False):
        return x.sum(axis=axis, keepdims=keepdims), x.shape

    def bwd(g, shape, axis=None, keepdims=False):
        if not keepdims:
            g = np.expand_dims(g, _norm_axis(axis, len(shape)))
        return (np.broadcast_to(g, shape).copy(),)

    return fwd, bwd


@primitive("mean")
def _mean():
    def fwd(x, axis=None, keepdims=False):
        axes = _norm_axis(axis, x.ndim)
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        return x.mean(axis=axis, keepdims=keepdims), (x.shape, count)

    def bwd(g, saved, axis=None, keepdims=False):
        shape, count = saved
        if not keepdims:
            g = np.expand_dims(g, _norm_axis(axis, len(shape)))
        return (np.broadcast_to(g / count, shape).copy(),)

    return fwd, bwd


@primitive("softmax")
def _softmax():
    def fwd(x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return y, y

    def bwd(g, y):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return fwd, bwd


@primitive("cumsum")
def _cumsum():
    def fwd(x):
        return np.cumsum(x, axis=-1), None

    def bwd(g, saved):
        return (np.flip(np.cumsum(np.flip(g, -1), axis=-1), -1),)

    return fwd, bwd


# --------------------------------------------------------- shape handling


@primitive("concatenate")
def _concatenate():
    def fwd(*xs, axis=-1):
        try:
            out = np.concatenate(xs, axis=axis)
        except ValueError:
            raise ShapeError(
                "concatenate: incompatible shapes " + ", ".join(str(x.shape) for x in xs)
            ) from None
        return out, [x.shape[axis] for x in xs]

    def bwd(g, sizes, axis=-1):
        cuts = np.cumsum(sizes)[:-1]
        return np.split(g, cuts, axis=axis)

    return fwd, bwd


@primitive("slice")
def _slice():
    def fwd(x, index=None):
        try:
            return x[index], x.shape
        except IndexError as exc:
            raise ShapeError(f"slice: {exc} for shape {x.shape}") from None

    def bwd(g, shape, index=None):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return fwd, bwd


@primitive("reshape")
def _reshape():
    def fwd(x, shape=None):
        try:
            return x.reshape(shape), x.shape
        except ValueError:
            raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def bwd(g, old_shape, shape=None):
        return (g.reshape(old_shape),)

    return fwd, bwd


@primitive("transpose")
def _transpose():
    def fwd(x, axes=None):
        axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
        if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
        return np.transpose(x, axes), axes

    def bwd(g, used_axes, axes=None):
        return (np.transpose(g, np.argsort(used_axes)),)

    return fwd, bwd


@primitive("gather")
def _gather():
    """Pick entries of the last axis by a fixed index list (permutations too)."""

    def fwd(x, index=None):
        index = np.asarray(index, dtype=np.intp)
        if index.size and (index.max() >= x.shape[-1] or index.min() < -x.shape[-1]):
            raise ShapeError(f"gather: index out of range for shape {x.shape}")
        return x[..., index], (x.shape, index)

    def bwd(g, saved, index=None):
        shape, idx = saved
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, (Ellipsis, idx), g)
        return (out,)

    return fwd, bwd


@primitive("take_along")
def _take_along():
    """Per-row selection on the last axis with a data-dependent index array."""

    def fwd(x, index=None):
        index = np.asarray(index, dtype=np.intp)
        if index.shape[:-1] != x.shape[:-1]:
            raise ShapeError(f"take_along: index shape {index.shape} vs input {x.shape}")
        return np.take_along_axis(x, index, axis=-1), (x.shape, index)

    def bwd(g, saved, index=None):
        shape, idx = saved
        flat = np.zeros((int(np.prod(shape[:-1])), shape[-1]), dtype=DTYPE)
        rows = np.repeat(np.arange(flat.shape[0]), idx.shape[-1])
        np.add.at(flat, (rows, idx.reshape(-1)), g.reshape(-1))
        return (flat.reshape(shape),)

    return fwd, bwd


# ----------------------------------------------------- fused / structured


@primitive("attention")
def _attention():
    """softmax(Q K^T / sqrt(d)) V over the last two axes, row-max stabilised."""

    def fwd(q, k, v):
        if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2] or q.shape[:-2] != k.shape[:-2]:
            raise ShapeError(
                f"attention: incompatible shapes {q.shape}, {k.shape} and {v.shape}"
            )
        scale = 1.0 / np.sqrt(q.shape[-1])
        s = (q @ _swap(k)) * scale
        s -= s.max(axis=-1, keepdims=True)
        a = np.exp(s)
        a /= a.sum(axis=-1, keepdims=True)
        return a @ v, (q, k, v, a, scale)

    def bwd(g, saved):
        q, k, v, a, scale = saved
        gv = _swap(a) @ g
        ga = g @ _swap(v)
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True))
        gq = (gs @ k) * scale
        gk = (_swap(gs) @ q) * scale
        return gq, gk, gv

    return fwd, bwd


@primitive("dropout")
def _dropout():
    """Multiply by a precomputed inverted-scaling mask."""

    def fwd(x, mask=None):
        if mask is None:
            return x.copy(), None
        if mask.shape != x.shape:
            raise ShapeError(f"dropout: mask shape {mask.shape} vs input {x.shape}")
        return x * mask, mask

    def bwd(g, saved, mask=None):
        return (g if mask is None else g * mask,)

    return fwd, bwd


@primitive("tri_solve")
def _tri_solve():
    """Solve ``L z = b`` for lower-triangular ``L`` of shape (..., n, n); ``b`` is (..., n)."""

    def fwd(lower, b):
        if lower.shape[-1] != lower.shape[-2] or lower.shape[:-1] != b.shape:
            raise ShapeError(f"tri_solve: incompatible shapes {lower.shape} and {b.shape}")
        z = _batched_forward_sub(lower, b)
        return z, (lower, z)

    def bwd(g, saved):
        lower, z = saved
        gb = _batched_back_sub(lower, g)
        gl = -np.tril(gb[..., :, None] * z[..., None, :])
        return gl, gb

    return fwd, bwd


def _batched_forward_sub(lower, b):
    n = b.shape[-1]
    z = np.empty_like(b)
    for i in range(n):
        acc = b[..., i] - np.einsum("...j,...j->...", lower[..., i, :i], z[..., :i])
        z[..., i] = acc / lower[..., i, i]
    return z


def _batched_back_sub(lower, g):
    """Solve ``L^T x = g``."""
    n = g.shape[-1]
    x = np.empty_like(g)
    for i in range(n - 1, -1, -1):
        acc = g[..., i] - np.einsum("...j,...j->...", lower[..., i + 1 :, i], x[..., i + 1 :])
        x[..., i] = acc / lower[..., i, i]
    return x
