"""Ground truth for the two conjugate families.

``normal`` (known noise) has a closed-form EIG. ``normal-unknown`` is the
conjugate Normal-Inverse-Gamma model; its posterior is available exactly,
so the EIG is a plain (non-nested) Monte Carlo average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .estimators import EigEstimate, PosteriorApprox, _summarise
from .models import LOG_2PI, GlmModel, Latent, log_prior, sample_prior, simulate


def _chol(a: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} is not positive definite") from None


def _gram(design: np.ndarray) -> np.ndarray:
    """``D^T D`` accumulated in a canonical row order (row-permutation exact)."""
    d = np.asarray(design, float).reshape(-1, np.shape(design)[-1])
    if len(d) == 0:
        return np.zeros((d.shape[1], d.shape[1]))
    d = d[np.lexsort(d.T[::-1])]
    return d.T @ d


def linear_gaussian_eig(design, prior_cov, noise_sd: float = 1.0) -> float:
    """``0.5 * log det(I + L^T D^T D L / sigma^2)`` with ``L L^T`` the prior covariance."""
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    lp = _chol(np.atleast_2d(np.asarray(prior_cov, float)), "prior covariance")
    b = lp.T @ _gram(design) @ lp / noise_sd**2
    lf = _chol(np.eye(len(b)) + b, "posterior precision")
    return float(np.sum(np.log(np.diag(lf))))


@dataclass
class GaussianPosterior:
    mean: np.ndarray  # (..., P)
    cov: np.ndarray  # (P, P), shared across the batch

    @property
    def chol(self) -> np.ndarray:
        return _chol(self.cov, "posterior covariance")

    def log_density(self, theta: np.ndarray) -> np.ndarray:
        return _mvn_logpdf(theta, self.mean, self.chol)


def _mvn_logpdf(x, mean, chol, scale=None):
    """Gaussian log-density with covariance ``scale * chol chol^T`` (``scale`` broadcasts)."""
    diff = np.asarray(x, float) - mean
    k = chol.shape[-1]
    z = solve_triangular(chol, diff.reshape(-1, k).T, lower=True).T.reshape(diff.shape)
    quad = np.sum(z * z, axis=-1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    if scale is None:
        return -0.5 * quad - 0.5 * logdet - 0.5 * k * LOG_2PI
    return -0.5 * quad / scale - 0.5 * k * np.log(scale) - 0.5 * logdet - 0.5 * k * LOG_2PI


def conjugate_posterior(design, y, prior_mean, prior_cov, noise_sd: float = 1.0) -> GaussianPosterior:
    """Exact posterior of the known-noise linear model; ``y`` may be a batch (..., N_E)."""
    if noise_sd <= 0:
        raise ValueError("noise_sd must be positive")
    design = np.asarray(design, float)
    lp = _chol(np.atleast_2d(np.asarray(prior_cov, float)), "prior covariance")
    prior_prec = cho_solve((lp, True), np.eye(len(lp)))
    prec = prior_prec + _gram(design) / noise_sd**2
    lf = _chol(prec, "posterior precision")
    cov = cho_solve((lf, True), np.eye(len(lf)))
    rhs = prior_prec @ np.asarray(prior_mean, float) + np.asarray(y, float) @ design / noise_sd**2
    mean = rhs @ cov.T
    return GaussianPosterior(mean, cov)


@dataclass
class NigPosterior:
    mean: np.ndarray  # (..., P)
    cov_factor: np.ndarray  # Cholesky factor of V_n; theta | var ~ N(mean, var * V_n)
    a_post: float
    b_post: np.ndarray  # (...)

    def log_density(self, theta: np.ndarray, var: np.ndarray) -> np.ndarray:
        var = np.asarray(var, float)
        normal = _mvn_logpdf(theta, self.mean, self.cov_factor, scale=var)
        a, b = self.a_post, self.b_post
        inv_gamma = a * np.log(b) - math.lgamma(a) - (a + 1.0) * np.log(var) - b / var
        return normal + inv_gamma

    def theta_mean(self) -> np.ndarray:
        return self.mean


def nig_posterior(design, y, prior_mean, prior_cov, a_p: float, b_p: float) -> NigPosterior:
    """Normal-Inverse-Gamma update; ``a_post = a_p + N_E / 2`` structurally."""
    if a_p <= 0 or b_p <= 0:
        raise ValueError("a_p and b_p must be positive")
    design = np.asarray(design, float)
    y = np.asarray(y, float)
    mu0 = np.asarray(prior_mean, float)
    lp = _chol(np.atleast_2d(np.asarray(prior_cov, float)), "prior covariance")
    prior_prec = cho_solve((lp, True), np.eye(len(lp)))
    prec = prior_prec + _gram(design)
    lf = _chol(prec, "posterior precision")
    cov = cho_solve((lf, True), np.eye(len(lf)))
    rhs = prior_prec @ mu0 + (y @ design if design.size else np.zeros_like(mu0))
    mean = rhs @ cov.T
    n_units = design.shape[0]
    quad = np.sum(y * y, axis=-1) if n_units else 0.0
    b_post = b_p + 0.5 * (quad + mu0 @ prior_prec @ mu0 - np.sum(mean * (mean @ prec.T), axis=-1))
    return NigPosterior(mean, _chol(cov, "posterior covariance"), a_p + 0.5 * n_units, b_post)


def _mvn_sample(mean, chol, m, rng, scale=None):
    eps = rng.standard_normal(mean.shape[:-1] + (m, mean.shape[-1]))
    dev = eps @ chol.T
    if scale is not None:
        dev = dev * np.sqrt(scale)[..., None]
    return mean[..., None, :] + dev


class ExactLinearPosterior(PosteriorApprox):
    """Conjugate posterior of the known-noise model as a reference ``q``."""

    def __init__(self, model: GlmModel):
        if model.family != "normal":
            raise ValueError("exact posterior needs the normal family")
        self.model = model

    def _post(self, y, design):
        m = self.model
        return conjugate_posterior(design, y, m.prior_mean, m.prior_cov, m.noise_sd)

    def sample(self, y, design, m, rng):
        post = self._post(y, design)
        return Latent(_mvn_sample(post.mean, post.chol, m, rng))

    def log_prob(self, latent, y, design):
        post = self._post(y, design)
        return _mvn_logpdf(latent.theta, post.mean[:, None, :], post.chol)


class ExactNigPosterior(PosteriorApprox):
    """Conjugate posterior of the unknown-noise model as a reference ``q``."""

    def __init__(self, model: GlmModel):
        if model.family != "normal-unknown":
            raise ValueError("exact NIG posterior needs the normal-unknown family")
        self.model = model

    def _post(self, y, design):
        m = self.model
        return nig_posterior(design, y, m.prior_mean, m.prior_cov, m.a_p, m.b_p)

    def sample(self, y, design, m, rng):
        post = self._post(y, design)
        var = post.b_post[:, None] / rng.gamma(post.a_post, 1.0, size=(len(y), m))
        return Latent(_mvn_sample(post.mean, post.cov_factor, m, rng, scale=var), var)

    def log_prob(self, latent, y, design):
        post = self._post(y, design)
        shifted = NigPosterior(post.mean[:, None, :], post.cov_factor, post.a_post, post.b_post[:, None])
        return shifted.log_density(latent.theta, latent.aux)


def linear_unknown_eig_mc(design, model: GlmModel, n: int, rng) -> EigEstimate:
    """Average of ``log p(theta, var | y, d) - log p(theta, var)`` over joint draws."""
    if model.family != "normal-unknown":
        raise ValueError("linear_unknown_eig_mc needs the normal-unknown family")
    if n < 1:
        raise ValueError("N must be >= 1")
    outer, _ = rng.spawn(2)
    lat = sample_prior(model, n, outer)
    y = simulate(model, design, lat, outer)
    post = nig_posterior(design, y, model.prior_mean, model.prior_cov, model.a_p, model.b_p)
    terms = post.log_density(lat.theta, lat.aux) - log_prior(model, lat)
    return _summarise("oracle", terms, n, 0)


def oracle_eig(model: GlmModel, design, n: int = 100_000, rng=None) -> float | None:
    """Ground-truth EIG when one exists, else ``None``."""
    if model.family == "normal":
        # independent of the prior mean
        return linear_gaussian_eig(design, model.prior_cov, model.noise_sd)
    if model.family == "normal-unknown":
        return linear_unknown_eig_mc(design, model, n, rng).value
    return None
