"""Parameter containers and the small set of layers the posterior networks use."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .engine import DTYPE, Graph, Tensor


class ParamSet(OrderedDict):
    """Ordered mapping ``name -> float64 array``; insertion order is the wire order."""

    def bind(self, graph: Graph | None) -> dict[str, Tensor]:
        """Wrap every array as a graph leaf (training) or a constant (evaluation)."""
        if graph is None:
            return {k: Tensor(v) for k, v in self.items()}
        return {k: graph.leaf(v) for k, v in self.items()}

    def copy(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self.items())

    def n_values(self) -> int:
        return int(sum(v.size for v in self.values()))


def init_linear(params: ParamSet, rng, name: str, fan_in: int, fan_out: int, scale=None):
    """He-normal weights; ``scale=0`` zero-initialises the layer."""
    std = np.sqrt(2.0 / fan_in) if scale is None else scale
    params[f"{name}.w"] = (rng.standard_normal((fan_in, fan_out)) * std).astype(DTYPE)
    params[f"{name}.b"] = np.zeros(fan_out, dtype=DTYPE)


def linear(p: dict[str, Tensor], name: str, x):
    return ops.add(ops.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def init_residual_net(params, rng, name, n_in, width, n_out, blocks, out_scale=None):
    init_linear(params, rng, f"{name}.in", n_in, width)
    for i in range(blocks):
        init_linear(params, rng, f"{name}.block{i}.0", width, width)
        # near-zero second layer keeps each block close to the identity at start
        init_linear(params, rng, f"{name}.block{i}.1", width, width, scale=1e-3)
    init_linear(params, rng, f"{name}.out", width, n_out, scale=out_scale)


def residual_blocks(p, name, h, blocks):
    for i in range(blocks):
        t = linear(p, f"{name}.block{i}.0", ops.relu(h))
        t = linear(p, f"{name}.block{i}.1", ops.relu(t))
        h = ops.add(h, t)
    return h


def residual_net(p, name, x, blocks):
    """Linear -> pre-activation residual blocks -> ReLU -> linear."""
    h = linear(p, f"{name}.in", x)
    h = residual_blocks(p, name, h, blocks)
    return linear(p, f"{name}.out", ops.relu(h))
