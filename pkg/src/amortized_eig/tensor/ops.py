"""Functional wrappers over the primitive registry."""
from __future__ import annotations

import numpy as np

from .engine import DTYPE, Tensor, forward_primitive as _fp


def add(a, b):
    return _fp(None, "add", [a, b])


def subtract(a, b):
    return _fp(None, "subtract", [a, b])


def multiply(a, b):
    return _fp(None, "multiply", [a, b])


def divide(a, b):
    return _fp(None, "divide", [a, b])


def negate(x):
    return _fp(None, "negate", [x])


def matmul(a, b):
    return _fp(None, "matmul", [a, b])


def exp(x):
    return _fp(None, "exp", [x])


def log(x):
    return _fp(None, "log", [x])


def sqrt(x):
    return _fp(None, "sqrt", [x])


def tanh(x):
    return _fp(None, "tanh", [x])


def relu(x):
    return _fp(None, "relu", [x])


def softplus(x):
    return _fp(None, "softplus", [x])


def sigmoid(x):
    return _fp(None, "sigmoid", [x])


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return _fp(None, "sum", [x], axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    return _fp(None, "mean", [x], axis=axis, keepdims=keepdims)


def softmax(x):
    return _fp(None, "softmax", [x])


def cumsum(x):
    return _fp(None, "cumsum", [x])


def concatenate(xs, axis=-1):
    return _fp(None, "concatenate", list(xs), axis=axis)


def reshape(x, shape):
    return _fp(None, "reshape", [x], shape=tuple(shape))


def transpose(x, axes=None):
    return _fp(None, "transpose", [x], axes=None if axes is None else tuple(axes))


def gather(x, index):
    return _fp(None, "gather", [x], index=np.asarray(index, dtype=np.intp))


def take_along(x, index):
    return _fp(None, "take_along", [x], index=np.asarray(index, dtype=np.intp))


def attention(q, k, v):
    return _fp(None, "attention", [q, k, v])


def tri_solve(lower, b):
    return _fp(None, "tri_solve", [lower, b])


def dropout(x, p: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout; the identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x if isinstance(x, Tensor) else Tensor(x)
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = 1.0 - p
    mask = (rng.random(np.shape(x.data if isinstance(x, Tensor) else x)) < keep).astype(DTYPE)
    return _fp(None, "dropout", [x], mask=mask / keep)


def square(x):
    return multiply(x, x)
