from . import ops
from .engine import (
    DTYPE,
    PRIMITIVES,
    Graph,
    ShapeError,
    Tensor,
    as_tensor,
    forward_primitive,
)
from .gradcheck import GradcheckFailure, gradcheck

__all__ = [
    "DTYPE",
    "PRIMITIVES",
    "Graph",
    "GradcheckFailure",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "forward_primitive",
    "gradcheck",
    "ops",
]
