"""Non-amortized comparison posterior ``q(theta | y) = N(A y, Sigma)`` for one fixed design."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..estimators import PosteriorApprox
from ..models import GlmModel, Latent
from ..tensor import Tensor, ops
from ..tensor.nn import ParamSet
from .transforms import DIAG_FLOOR, LOG_2PI, _tril_index

SCALAR_FAMILIES = ("normal", "logistic", "binomial")


def init_baseline(model: GlmModel, n_units: int) -> ParamSet:
    """``A = 0`` (shape param_dim x N_E) and ``Sigma = I``."""
    if model.family not in SCALAR_FAMILIES:
        raise ValueError(f"the linear baseline needs a scalar-response family, got {model.family!r}")
    k = model.param_dim
    params = ParamSet()
    params["A"] = np.zeros((k, n_units))
    params["diag"] = np.full(k, math.log(math.expm1(1.0 - DIAG_FLOOR)))
    params["offdiag"] = np.zeros(k * (k - 1) // 2)
    return params


def covariance_factor(params) -> np.ndarray:
    """Lower-triangular factor of ``Sigma`` from the unconstrained parameters."""
    diag = np.logaddexp(0.0, params["diag"]) + DIAG_FLOOR
    k = diag.size
    packed = np.concatenate([[0.0], diag, params["offdiag"]])
    return packed[_tril_index(k)].reshape(k, k)


def baseline_log_prob(a, sigma, design, y, latent: Latent) -> np.ndarray:
    """Gaussian log-density of ``latent.theta`` at mean ``A y`` with covariance ``sigma``.

    ``A`` is (param_dim x N_E) so that ``A y`` lives in latent space; ``y``
    is (..., N_E) and broadcasts against the latent batch.
    """
    a = np.atleast_2d(np.asarray(a, float))
    sigma = np.atleast_2d(np.asarray(sigma, float))
    y = np.asarray(y, float)
    theta = np.asarray(latent.theta, float)
    if a.shape[1] != y.shape[-1] or a.shape[0] != theta.shape[-1] or sigma.shape != (a.shape[0],) * 2:
        raise ValueError(f"dimension mismatch: A {a.shape}, Sigma {sigma.shape}, y {y.shape}, theta {theta.shape}")
    chol = np.linalg.cholesky(sigma)
    diff = theta - y @ a.T
    k = a.shape[0]
    z = solve_triangular(chol, diff.reshape(-1, k).T, lower=True).T.reshape(diff.shape)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(np.diag(chol))) - 0.5 * k * LOG_2PI


def baseline_log_prob_tensor(p: dict, y: np.ndarray, theta: np.ndarray):
    """Differentiable form used in training; ``y`` (B, N_E), ``theta`` (B, k)."""
    k = theta.shape[-1]
    b = theta.shape[0]
    diag = ops.add(ops.softplus(p["diag"]), DIAG_FLOOR)
    packed = ops.concatenate([Tensor(np.zeros(1)), diag, p["offdiag"]], axis=-1)
    lower = ops.reshape(ops.gather(packed, _tril_index(k)), (k, k))
    mean = ops.matmul(Tensor(y), ops.transpose(p["A"]))
    lower_b = ops.multiply(lower, Tensor(np.ones((b, 1, 1))))
    z = ops.tri_solve(lower_b, ops.subtract(Tensor(theta), mean))
    quad = ops.sum(ops.square(z), axis=-1)
    return ops.subtract(ops.multiply(-0.5, quad), ops.sum(ops.log(diag))) - 0.5 * k * LOG_2PI


@dataclass
class BaselinePosterior(PosteriorApprox):
    """Fitted baseline for the design it was trained on."""

    a: np.ndarray
    sigma: np.ndarray

    def log_prob(self, latent, y, design):
        return baseline_log_prob(self.a, self.sigma, design, np.asarray(y, float)[:, None, :], latent)

    def sample(self, y, design, m, rng):
        mean = np.asarray(y, float) @ self.a.T
        chol = np.linalg.cholesky(self.sigma)
        eps = rng.standard_normal(mean.shape[:-1] + (m, mean.shape[-1]))
        return Latent(mean[..., None, :] + eps @ chol.T)

    @classmethod
    def from_params(cls, params) -> "BaselinePosterior":
        lower = covariance_factor(params)
        return cls(np.array(params["A"]), lower @ lower.T)
