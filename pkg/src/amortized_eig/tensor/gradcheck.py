"""Central-difference verification of primitive gradients."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .engine import DTYPE, Graph, forward_primitive


class GradcheckFailure(ArithmeticError):
    """A non-finite value appeared while checking ``primitive``."""

    def __init__(self, primitive: str, detail: str):
        super().__init__(f"{primitive}: {detail}")
        self.primitive = primitive


def _projected(op, arrays, weights, attrs):
    out = forward_primitive(None, op, [np.asarray(a, dtype=DTYPE) for a in arrays], **attrs)
    return float(np.sum(out.data * weights))


def gradcheck(
    op: str,
    point: Sequence[np.ndarray],
    step: float = 1e-5,
    attrs: dict | None = None,
    wrt: Sequence[int] | None = None,
    seed: int = 0,
) -> float:
    """Max of ``|analytic - numeric| / max(1, |analytic|)`` over all input entries.

    Non-scalar outputs are contracted against fixed random weights so the
    check covers every output entry. ``wrt`` restricts which inputs are
    perturbed (integer-valued index inputs, for example, are not).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    attrs = attrs or {}
    arrays = [np.array(p, dtype=DTYPE) for p in point]
    for i, a in enumerate(arrays):
        if not np.all(np.isfinite(a)):
            raise GradcheckFailure(op, f"input {i} is not finite")
    wrt = range(len(arrays)) if wrt is None else wrt

    g = Graph()
    leaves = [g.leaf(a) for a in arrays]
    out = forward_primitive(g, op, leaves, **attrs)
    if not np.all(np.isfinite(out.data)):
        raise GradcheckFailure(op, "non-finite forward value")
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    loss = forward_primitive(g, "sum", [forward_primitive(g, "multiply", [out, weights])])
    g.backward(loss)

    worst = 0.0
    for i in wrt:
        analytic = g.grad(leaves[i])
        base = arrays[i]
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = _projected(op, arrays, weights, attrs)
            flat[j] = orig - step
            down = _projected(op, arrays, weights, attrs)
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            if not np.isfinite(numeric):
                raise GradcheckFailure(op, f"non-finite difference at input {i}, entry {j}")
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
