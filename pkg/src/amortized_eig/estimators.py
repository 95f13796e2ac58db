"""Monte Carlo estimators and bounds for the expected information gain.

All estimators share one sampling layout so that runs with equal seeds are
directly comparable: the generator passed in is split into an outer stream
(joint prior/outcome draws) and an inner stream (nested samples). With
``q = PriorApprox(model)`` the variational estimators therefore reproduce
plain nested Monte Carlo bit for bit.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .models import GlmModel, Latent, log_prior, sample_prior, simulate

ESTIMATORS = ("nmc-upper", "nmc-lower", "posterior", "vnmc-upper", "cvnmc-lower")


class EstimatorError(FloatingPointError):
    """A likelihood or importance weight was not finite."""


class PosteriorApprox(ABC):
    """Conditional density ``q(theta | y, d)`` over model latents.

    ``y`` always carries a leading batch axis of size N; samples come back
    with batch shape (N, m) and ``log_prob`` accepts latents of that shape.
    """

    @abstractmethod
    def sample(self, y, design, m: int, rng) -> Latent: ...

    @abstractmethod
    def log_prob(self, latent: Latent, y, design) -> np.ndarray: ...

    def sample_and_log_prob(self, y, design, m: int, rng) -> tuple[Latent, np.ndarray]:
        latent = self.sample(y, design, m, rng)
        return latent, self.log_prob(latent, y, design)


class PriorApprox(PosteriorApprox):
    """The prior, ignoring ``y`` and ``d``."""

    def __init__(self, model: GlmModel):
        self.model = model

    def sample(self, y, design, m, rng):
        return sample_prior(self.model, (len(y), m), rng)

    def log_prob(self, latent, y, design):
        return log_prior(self.model, latent)


@dataclass
class EigEstimate:
    estimator: str
    value: float
    std_err: float
    n: int
    m: int
    terms: np.ndarray = field(default=None, repr=False)

    @property
    def total_samples(self) -> int:
        return sample_budget_report(self.n, self.m, self.estimator)


def sample_budget_report(n: int, m: int, estimator: str) -> int:
    """Total latent draws ``T``: ``N * M`` for nested estimators, ``N`` otherwise."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if n < 1 or (estimator != "posterior" and m < 1):
        raise ValueError("sample counts must be >= 1")
    return n if estimator == "posterior" else n * m


def log_mean_exp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Stable ``log(mean(exp(x)))``; an all ``-inf`` slice is an error."""
    mx = np.max(x, axis=axis, keepdims=True)
    if not np.all(np.isfinite(mx)):
        bad = int(np.argmax(~np.isfinite(mx.reshape(-1))))
        raise EstimatorError(f"no finite log-weight in slice {bad}")
    s = np.sum(np.exp(x - mx), axis=axis, keepdims=True)
    return np.squeeze(mx + np.log(s), axis=axis) - math.log(x.shape[axis])


def _summarise(tag, terms, n, m) -> EigEstimate:
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EigEstimate(tag, float(terms.mean()), se, n, m, terms)


def _require_finite(name: str, values: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise EstimatorError(f"non-finite {name} at sample index {idx}")


def _outer_draws(model, design, n, rng):
    outer, inner = rng.spawn(2)
    theta0 = sample_prior(model, n, outer)
    y = simulate(model, design, theta0, outer)
    return theta0, y, inner


def _ll_outer(model, design, theta0: Latent, y) -> np.ndarray:
    lat = Latent(theta0.theta[:, None], None if theta0.aux is None else theta0.aux[:, None])
    ll0 = kernels.loglik_matrix(model, design, lat, y)
    _require_finite("likelihood", ll0)
    return ll0


def _check_counts(n, m=1):
    if n < 1 or m < 1:
        raise ValueError("N and M must be >= 1")


def nmc(model: GlmModel, design, n: int, m: int, variant: str, rng) -> EigEstimate:
    """Nested Monte Carlo with fresh prior draws per outer sample.

    ``variant="lower"`` puts the outer latent into the inner average
    (contrastive form), which turns the upper bound into a lower bound.
    """
    _check_counts(n, m)
    if variant not in ("upper", "lower"):
        raise ValueError("variant must be 'upper' or 'lower'")
    theta0, y, inner = _outer_draws(model, design, n, rng)
    ll0 = _ll_outer(model, design, theta0, y)
    ll = kernels.loglik_matrix(model, design, sample_prior(model, (n, m), inner), y)
    _require_finite("likelihood", ll)
    if variant == "lower":
        ll = np.concatenate([ll0, ll], axis=1)
    terms = ll0[:, 0] - log_mean_exp(ll, axis=1)
    return _summarise(f"nmc-{variant}", terms, n, m)


def posterior_bound(model: GlmModel, design, q: PosteriorApprox, n: int, rng) -> EigEstimate:
    """Variational posterior lower bound ``E[log q(theta | y, d) - log p(theta)]``."""
    _check_counts(n)
    theta0, y, _ = _outer_draws(model, design, n, rng)
    lat = theta0[:, None]
    logq = q.log_prob(lat, y, design)[:, 0]
    _require_finite("log q", logq)
    terms = logq - log_prior(model, lat)[:, 0]
    return _summarise("posterior", terms, n, 0)


def _vnmc(model, design, q, n, m, rng, contrastive):
    _check_counts(n, m)
    theta0, y, inner = _outer_draws(model, design, n, rng)
    ll0 = _ll_outer(model, design, theta0, y)
    lat, logq = q.sample_and_log_prob(y, design, m, inner)
    _require_finite("log q", logq)
    ll = kernels.loglik_matrix(model, design, lat, y)
    _require_finite("likelihood", ll)
    logw = ll + (log_prior(model, lat) - logq)
    if contrastive:
        lat0 = theta0[:, None]
        logq0 = q.log_prob(lat0, y, design)
        _require_finite("log q", logq0)
        logw0 = ll0 + (log_prior(model, lat0) - logq0)
        logw = np.concatenate([logw0, logw], axis=1)
    return ll0[:, 0] - log_mean_exp(logw, axis=1)


def vnmc_upper(model: GlmModel, design, q: PosteriorApprox, n: int, m: int, rng) -> EigEstimate:
    """Variational NMC upper bound: ``q`` importance-samples the marginal likelihood."""
    return _summarise("vnmc-upper", _vnmc(model, design, q, n, m, rng, False), n, m)


def cvnmc_lower(model: GlmModel, design, q: PosteriorApprox, n: int, m: int, rng) -> EigEstimate:
    """Contrastive VNMC lower bound; the outer latent joins the importance average."""
    return _summarise("cvnmc-lower", _vnmc(model, design, q, n, m, rng, True), n, m)
