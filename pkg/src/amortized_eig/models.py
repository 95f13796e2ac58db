"""Generalized linear models with Gaussian coefficient priors.

Six families share one pattern: coefficients ``theta`` are drawn from a
Gaussian prior, a linear predictor ``D @ theta`` is pushed through an
inverse link, and each experimental unit draws an outcome from the
corresponding exponential-family distribution.

Batching convention: a latent batch has arbitrary leading dimensions and
outcome arrays broadcast against them, so ``theta`` of shape (N, M, P) and
``y`` of shape (N, 1, N_E) give log-likelihoods of shape (N, M).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

FAMILIES = ("normal", "normal-unknown", "logistic", "binomial", "categorical", "multinomial")
LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Outcome or latent value outside the support of the family."""


@dataclass
class Latent:
    """Coefficient vector ``theta`` plus, for ``normal-unknown``, the noise variance ``aux``."""

    theta: np.ndarray
    aux: np.ndarray | None = None

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.theta.shape[:-1]

    def __getitem__(self, index) -> "Latent":
        return Latent(self.theta[index], None if self.aux is None else self.aux[index])


@dataclass(frozen=True, eq=False)
class GlmModel:
    family: str
    n_predictors: int
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None
    noise_sd: float = 1.0
    a_p: float = 3.5
    b_p: float = 3.5
    n_trials: int = 10
    n_classes: int = 3
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n_predictors < 0:
            raise ValueError("n_predictors must be non-negative")
        k = self.param_dim
        mean = np.zeros(k) if self.prior_mean is None else np.asarray(self.prior_mean, float)
        cov = np.eye(k) if self.prior_cov is None else np.asarray(self.prior_cov, float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(k)
        if mean.shape != (k,) or cov.shape != (k, k):
            raise ValueError(f"prior shapes {mean.shape}, {cov.shape} do not match param_dim {k}")
        if not np.allclose(cov, cov.T):
            raise ValueError("prior covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("prior covariance is not positive definite") from None
        if self.noise_sd <= 0 or self.a_p <= 0 or self.b_p <= 0:
            raise ValueError("noise_sd, a_p and b_p must be positive")
        if self.n_trials < 1 or self.n_classes < 2:
            raise ValueError("n_trials must be >= 1 and n_classes >= 2")
        object.__setattr__(self, "prior_mean", mean)
        object.__setattr__(self, "prior_cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def n_coef(self) -> int:
        return self.n_predictors + 1

    @property
    def multiclass(self) -> bool:
        return self.family in ("categorical", "multinomial")

    @property
    def param_dim(self) -> int:
        return self.n_coef * (self.n_classes if self.multiclass else 1)

    @property
    def latent_dim(self) -> int:
        """Dimension of the unconstrained vector the flow models."""
        return self.param_dim + (1 if self.family == "normal-unknown" else 0)

    @property
    def outcome_width(self) -> int:
        """Per-unit width of the outcome encoding fed to the set encoder."""
        return self.n_classes if self.multiclass else 1

    @property
    def prior_chol(self) -> np.ndarray:
        return self._chol


def scaled_identity_model(family: str, n_predictors: int, prior_scale: float = 1.0, **kw) -> GlmModel:
    """Zero-mean model with ``prior_cov = prior_scale * I``."""
    probe = GlmModel(family, n_predictors, **kw)
    return GlmModel(family, n_predictors, prior_cov=prior_scale * np.eye(probe.param_dim), **kw)


# ------------------------------------------------------------------ prior


def sample_prior(model: GlmModel, n, rng: np.random.Generator) -> Latent:
    """Draw ``n`` (an int or a batch shape) latents from the prior.

    For ``normal-unknown`` the noise variance is InverseGamma(a_p, b_p)
    (mean ``b_p / (a_p - 1)``) and the coefficients are Gaussian with
    covariance scaled by that variance, the conjugate arrangement.
    """
    shape = (n,) if np.isscalar(n) else tuple(n)
    if any(s < 1 for s in shape):
        raise ValueError("sample count must be >= 1")
    aux = None
    if model.family == "normal-unknown":
        aux = 1.0 / rng.gamma(model.a_p, 1.0 / model.b_p, size=shape)
    eps = rng.standard_normal(shape + (model.param_dim,))
    dev = eps @ model.prior_chol.T
    if aux is not None:
        dev = dev * np.sqrt(aux)[..., None]
    return Latent(model.prior_mean + dev, aux)


def _mvn_quadratic(model: GlmModel, theta: np.ndarray) -> np.ndarray:
    diff = theta - model.prior_mean
    flat = diff.reshape(-1, model.param_dim).T
    z = solve_triangular(model.prior_chol, flat, lower=True)
    return np.sum(z * z, axis=0).reshape(theta.shape[:-1])


def log_prior(model: GlmModel, latent: Latent) -> np.ndarray:
    """Prior log-density in nats, one value per latent in the batch."""
    theta = np.asarray(latent.theta, float)
    if theta.shape[-1] != model.param_dim:
        raise ValueError(f"latent dimension {theta.shape[-1]} != param_dim {model.param_dim}")
    k = model.param_dim
    quad = _mvn_quadratic(model, theta)
    logdet = 2.0 * np.sum(np.log(np.diag(model.prior_chol)))
    if model.family != "normal-unknown":
        return -0.5 * quad - 0.5 * logdet - 0.5 * k * LOG_2PI
    if latent.aux is None:
        raise DomainError("normal-unknown latent needs the noise variance")
    v = np.asarray(latent.aux, float)
    if np.any(v <= 0):
        raise DomainError("noise variance must be positive")
    log_v = np.log(v)
    normal = -0.5 * quad / v - 0.5 * k * log_v - 0.5 * logdet - 0.5 * k * LOG_2PI
    a, b = model.a_p, model.b_p
    inv_gamma = a * math.log(b) - math.lgamma(a) - (a + 1.0) * log_v - b / v
    return normal + inv_gamma


# ---------------------------------------------------------------- designs


def sample_designs(n_designs: int, n_units: int, n_predictors: int, rng, intercept: bool = False):
    """i.i.d. standard-normal design matrices of shape (n_designs, n_units, n_predictors + 1).

    With ``intercept=True`` the first column is fixed to one instead.
    """
    if min(n_designs, n_units) < 1 or n_predictors < 0:
        raise ValueError("design counts must be >= 1")
    d = rng.standard_normal((n_designs, n_units, n_predictors + 1))
    if intercept:
        d[..., 0] = 1.0
    return d


# --------------------------------------------------------------- outcomes


def linear_predictor(model: GlmModel, design: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``D @ theta`` with shape (..., N_E) or (..., N_E, K) for multiclass families."""
    design = np.asarray(design, float)
    if design.ndim != 2 or design.shape[1] != model.n_coef:
        raise ValueError(f"design must be N_E x {model.n_coef}, got {design.shape}")
    if theta.shape[-1] != model.param_dim:
        raise ValueError(f"latent dimension {theta.shape[-1]} != param_dim {model.param_dim}")
    if model.multiclass:
        coef = theta.reshape(theta.shape[:-1] + (model.n_coef, model.n_classes))
        return np.einsum("ep,...pk->...ek", design, coef)
    return theta @ design.T


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def simulate(model: GlmModel, design: np.ndarray, latent: Latent, rng: np.random.Generator) -> np.ndarray:
    """Draw one outcome per unit for every latent in the batch."""
    eta = linear_predictor(model, design, np.asarray(latent.theta, float))
    bad = ~np.isfinite(eta)
    if bad.any():
        unit = np.argwhere(bad)[0][eta.ndim - (2 if model.multiclass else 1)]
        raise FloatingPointError(f"non-finite linear predictor at unit {unit}")
    fam = model.family
    if fam == "normal":
        return eta + model.noise_sd * rng.standard_normal(eta.shape)
    if fam == "normal-unknown":
        return eta + np.sqrt(latent.aux)[..., None] * rng.standard_normal(eta.shape)
    if fam == "logistic":
        return (rng.random(eta.shape) < _sigmoid(eta)).astype(float)
    if fam == "binomial":
        return rng.binomial(model.n_trials, _sigmoid(eta)).astype(float)
    probs = np.exp(_log_softmax(eta))
    if fam == "categorical":
        u = rng.random(eta.shape[:-1])
        cdf = np.cumsum(probs, axis=-1)
        return np.minimum((u[..., None] > cdf).sum(axis=-1), model.n_classes - 1).astype(float)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    return rng.multinomial(model.n_trials, probs).astype(float)


def check_outcome(model: GlmModel, y: np.ndarray) -> None:
    y = np.asarray(y, float)
    fam = model.family
    if not np.all(np.isfinite(y)):
        raise DomainError("outcome contains non-finite values")
    if fam in ("normal", "normal-unknown"):
        return
    if np.any(y != np.round(y)):
        raise DomainError(f"{fam} outcomes must be integer valued")
    if fam == "logistic" and np.any((y != 0) & (y != 1)):
        raise DomainError("logistic outcomes must be 0 or 1")
    if fam == "binomial" and np.any((y < 0) | (y > model.n_trials)):
        raise DomainError(f"binomial counts must lie in [0, {model.n_trials}]")
    if fam == "categorical" and np.any((y < 0) | (y >= model.n_classes)):
        raise DomainError(f"class index must lie in [0, {model.n_classes})")
    if fam == "multinomial":
        if y.shape[-1] != model.n_classes or np.any(y < 0):
            raise DomainError("multinomial outcome must be a non-negative count vector of length K")
        if np.any(y.sum(axis=-1) != model.n_trials):
            raise DomainError(f"multinomial counts must sum to {model.n_trials}")


def unit_log_likelihood(model, design, latent: Latent, y, validate: bool = True) -> np.ndarray:
    """Per-unit log-likelihood with shape (..., N_E)."""
    y = np.asarray(y, float)
    if validate:
        check_outcome(model, y)
    eta = linear_predictor(model, design, np.asarray(latent.theta, float))
    fam = model.family
    if fam == "normal":
        var = model.noise_sd**2
        return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * (y - eta) ** 2 / var
    if fam == "normal-unknown":
        if latent.aux is None:
            raise DomainError("normal-unknown latent needs the noise variance")
        var = np.asarray(latent.aux, float)[..., None]
        return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - eta) ** 2 / var
    if fam == "logistic":
        return y * _log_sigmoid(eta) + (1.0 - y) * _log_sigmoid(-eta)
    if fam == "binomial":
        n = model.n_trials
        coef = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
        return coef + y * _log_sigmoid(eta) + (n - y) * _log_sigmoid(-eta)
    logp = _log_softmax(eta)
    if fam == "categorical":
        idx = np.broadcast_to(y, logp.shape[:-1]).astype(np.intp)[..., None]
        return np.take_along_axis(logp, idx, axis=-1)[..., 0]
    n = model.n_trials
    coef = gammaln(n + 1.0) - gammaln(y + 1.0).sum(axis=-1)
    return coef + (y * logp).sum(axis=-1)


def log_likelihood(model, design, latent: Latent, y, validate: bool = True) -> np.ndarray:
    """Joint log-likelihood over the units of one design (nats)."""
    return unit_log_likelihood(model, design, latent, y, validate).sum(axis=-1)


# ----------------------------------------------------- flow-facing helpers


def encode_outcome(model: GlmModel, y: np.ndarray) -> np.ndarray:
    """Per-unit real-valued encoding with shape (..., N_E, outcome_width)."""
    y = np.asarray(y, float)
    if model.family == "categorical":
        return np.eye(model.n_classes)[y.astype(np.intp)]
    if model.family == "multinomial":
        return y
    return y[..., None]


def to_unconstrained(model: GlmModel, latent: Latent) -> tuple[np.ndarray, np.ndarray]:
    """Map a latent to the flow's coordinates; returns ``(u, log|du/dlatent|)``.

    ``normal-unknown`` appends ``log aux``, whose Jacobian is ``1 / aux``.
    """
    theta = np.asarray(latent.theta, float)
    if model.family != "normal-unknown":
        return theta, np.zeros(theta.shape[:-1])
    v = np.asarray(latent.aux, float)
    if np.any(v <= 0):
        raise DomainError("noise variance must be positive")
    log_v = np.log(v)
    return np.concatenate([theta, log_v[..., None]], axis=-1), -log_v


def from_unconstrained(model: GlmModel, u: np.ndarray) -> tuple[Latent, np.ndarray]:
    """Inverse of :func:`to_unconstrained`; returns the latent and ``log|du/dlatent|``."""
    if model.family != "normal-unknown":
        return Latent(u), np.zeros(u.shape[:-1])
    log_v = u[..., -1]
    return Latent(u[..., :-1], np.exp(log_v)), -log_v
