"""Backend selection for the nested log-likelihood sweep.

The compiled extension ``_kernels`` is used when it imports; otherwise, or
when ``AMORTIZED_EIG_PURE=1`` is set, a chunked numpy path is used. Both
produce the same (N, M) matrix up to floating-point summation order.
"""
from __future__ import annotations

import os

import numpy as np

from .models import GlmModel, Latent, FAMILIES, unit_log_likelihood

try:
    from . import _kernels as _ext
except ImportError:  # pragma: no cover - depends on the build
    _ext = None

AVAILABLE = ("cython", "python") if _ext is not None else ("python",)
_backend = "python" if _ext is None or os.environ.get("AMORTIZED_EIG_PURE") == "1" else "cython"

# elements of the (chunk, M, N_E[, K]) temporary in the numpy path
_CHUNK_ELEMS = 4_000_000


def backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Switch backends; returns the previous one."""
    global _backend
    if name not in AVAILABLE:
        raise ValueError(f"backend {name!r} unavailable; have {AVAILABLE}")
    prev, _backend = _backend, name
    return prev


def loglik_matrix(model: GlmModel, design: np.ndarray, latent: Latent, y: np.ndarray) -> np.ndarray:
    """``out[n, m] = log p(y[n] | latent[n, m], design)`` for an (N, M) latent batch."""
    theta = np.ascontiguousarray(latent.theta, dtype=np.float64)
    if theta.ndim != 3:
        raise ValueError(f"latent batch must be (N, M, dim), got {theta.shape}")
    n_outer, n_inner = theta.shape[:2]
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != n_outer:
        raise ValueError(f"outcome batch {y.shape[0]} != latent batch {n_outer}")
    if _backend == "cython":
        return _cython(model, design, theta, latent.aux, y)
    return _python(model, design, theta, latent.aux, y)


def _python(model, design, theta, aux, y):
    n_outer, n_inner = theta.shape[:2]
    per_row = n_inner * design.shape[0] * (model.n_classes if model.multiclass else 1)
    step = max(1, _CHUNK_ELEMS // max(per_row, 1))
    out = np.empty((n_outer, n_inner))
    for lo in range(0, n_outer, step):
        hi = min(n_outer, lo + step)
        lat = Latent(theta[lo:hi], None if aux is None else aux[lo:hi])
        out[lo:hi] = unit_log_likelihood(model, design, lat, y[lo:hi, None], validate=False).sum(-1)
    return out


def _cython(model, design, theta, aux, y):
    n_outer, n_inner = theta.shape[:2]
    y3 = y.reshape(n_outer, y.shape[1], -1)
    aux2 = np.ones((1, 1)) if aux is None else np.ascontiguousarray(aux, dtype=np.float64)
    return _ext.loglik_matrix(
        FAMILIES.index(model.family),
        np.ascontiguousarray(design, dtype=np.float64),
        theta,
        aux2,
        np.ascontiguousarray(y3),
        float(model.noise_sd) ** 2,
        int(model.n_trials),
        int(model.n_classes),
    )
