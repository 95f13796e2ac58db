import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from amortized_eig import kernels
from amortized_eig.models import (
    FAMILIES, DomainError, GlmModel, Latent, check_outcome, from_unconstrained, log_likelihood,
    log_prior, sample_designs, sample_prior, scaled_identity_model, simulate, to_unconstrained,
    unit_log_likelihood,
)


def _model(family, n_predictors=1, scale=1.0):
    return scaled_identity_model(family, n_predictors, scale)


def _one(model, seed=0):
    r = np.random.default_rng(seed)
    return sample_prior(model, 1, r), sample_designs(1, 1, model.n_predictors, r)[0]


def _unit_mass(model, design, lat):
    """Total probability of one experimental unit, summed or integrated over outcomes."""
    fam = model.family
    if fam in ("normal", "normal-unknown"):
        def dens(v):
            return float(np.exp(unit_log_likelihood(model, design, lat, np.array([[v]]))[0, 0]))
        eta = float((lat.theta @ design.T)[0, 0])
        return integrate.quad(dens, eta - 40, eta + 40, epsabs=1e-12, limit=200)[0]
    if fam == "logistic":
        outcomes = [0.0, 1.0]
    elif fam == "binomial":
        outcomes = [float(k) for k in range(model.n_trials + 1)]
    elif fam == "categorical":
        outcomes = [float(k) for k in range(model.n_classes)]
    else:
        n, k = model.n_trials, model.n_classes
        outcomes = [c + (n - sum(c),) for c in itertools.product(range(n + 1), repeat=k - 1) if sum(c) <= n]
    total = 0.0
    for o in outcomes:
        y = np.array(o, float).reshape((1, 1, -1) if fam == "multinomial" else (1, 1))
        total += float(np.exp(unit_log_likelihood(model, design, lat, y)[0, 0]))
    return total


@pytest.mark.parametrize("family", FAMILIES)
def test_likelihood_normalizes(family):
    model = _model(family)
    for seed in range(3):
        lat, d = _one(model, seed)
        assert abs(_unit_mass(model, d, lat) - 1.0) < 1e-6


def test_normal_log_likelihood_by_hand():
    model = GlmModel("normal", 1, noise_sd=2.0)
    lat = Latent(np.array([[1.0, -1.0]]))
    d = np.array([[1.0, 2.0]])
    y = np.array([[0.5]])
    eta = 1.0 - 2.0
    expected = -0.5 * math.log(2 * math.pi * 4.0) - (0.5 - eta) ** 2 / 8.0
    assert log_likelihood(model, d, lat, y)[0] == pytest.approx(expected, abs=1e-12)


def test_prior_moments():
    model = GlmModel("normal", 1, prior_mean=np.array([1.0, -2.0]), prior_cov=np.array([[2.0, 0.5], [0.5, 1.0]]))
    lat = sample_prior(model, 200_000, np.random.default_rng(1))
    np.testing.assert_allclose(lat.theta.mean(0), model.prior_mean, atol=0.02)
    np.testing.assert_allclose(np.cov(lat.theta.T), model.prior_cov, atol=0.03)


def test_inverse_gamma_noise_mean():
    model = _model("normal-unknown")
    lat = sample_prior(model, 400_000, np.random.default_rng(2))
    assert lat.aux.mean() == pytest.approx(model.b_p / (model.a_p - 1.0), rel=0.01)


def test_log_prior_integrates_to_one_nig():
    model = _model("normal-unknown", n_predictors=0)

    def dens(th, log_v):
        v = math.exp(log_v)
        return float(np.exp(log_prior(model, Latent(np.array([[th]]), np.array([v])))[0])) * v

    # integrate over log v so the heavy inverse-gamma tail is covered
    mass = integrate.dblquad(dens, -8.0, 25.0, lambda u: -40.0 * math.exp(u / 2), lambda u: 40.0 * math.exp(u / 2),
                             epsabs=1e-11)[0]
    assert abs(mass - 1.0) < 1e-6


@pytest.mark.parametrize("family", ["logistic", "binomial"])
def test_simulated_rate(family):
    model = GlmModel(family, 0, prior_mean=np.array([0.7]), prior_cov=np.array([[1e-12]]))
    lat = sample_prior(model, 100_000, np.random.default_rng(3))
    y = simulate(model, np.ones((1, 1)), lat, np.random.default_rng(4))
    p = 1.0 / (1.0 + math.exp(-0.7))
    scale = 1 if family == "logistic" else model.n_trials
    assert y.mean() / scale == pytest.approx(p, abs=0.005)


def test_multinomial_counts_sum():
    model = _model("multinomial", 2)
    r = np.random.default_rng(5)
    lat = sample_prior(model, 50, r)
    y = simulate(model, sample_designs(1, 5, 2, r)[0], lat, r)
    assert y.shape == (50, 5, 3)
    assert np.all(y.sum(-1) == model.n_trials)


def test_outcome_domain_checks():
    with pytest.raises(DomainError):
        check_outcome(_model("logistic"), np.array([0.0, 2.0]))
    with pytest.raises(DomainError):
        check_outcome(_model("binomial"), np.array([11.0]))
    with pytest.raises(DomainError):
        check_outcome(_model("categorical"), np.array([0.5]))
    with pytest.raises(DomainError):
        check_outcome(_model("multinomial"), np.array([[3.0, 3.0, 3.0]]))


def test_model_validation():
    with pytest.raises(ValueError):
        GlmModel("poisson", 1)
    with pytest.raises(ValueError):
        GlmModel("normal", 1, prior_cov=np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert GlmModel("multinomial", 2).param_dim == 9
    assert GlmModel("normal-unknown", 2).latent_dim == 4


def test_non_finite_predictor_reports_unit():
    model = _model("normal")
    d = np.array([[1.0, 0.0], [np.inf, 1.0]])
    with pytest.raises(FloatingPointError, match="unit 1"):
        simulate(model, d, Latent(np.array([[1.0, 1.0]])), np.random.default_rng(0))


def test_designs_intercept():
    d = sample_designs(4, 5, 2, np.random.default_rng(0), intercept=True)
    assert d.shape == (4, 5, 3) and np.all(d[..., 0] == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 20.0))
def test_unconstrained_round_trip(t, v):
    model = _model("normal-unknown", n_predictors=0)
    lat = Latent(np.array([[t]]), np.array([v]))
    u, ld = to_unconstrained(model, lat)
    back, ld_back = from_unconstrained(model, u)
    assert back.aux[0] == pytest.approx(v, rel=1e-12)
    assert ld[0] == pytest.approx(ld_back[0], abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_backends_agree(family):
    if "cython" not in kernels.AVAILABLE:
        pytest.skip("compiled kernel not built")
    model = _model(family, 2)
    r = np.random.default_rng(11)
    d = sample_designs(1, 5, 2, r)[0]
    outer = sample_prior(model, 7, r)
    y = simulate(model, d, outer, r)
    inner = sample_prior(model, (7, 9), r)
    prev = kernels.set_backend("python")
    try:
        a = kernels.loglik_matrix(model, d, inner, y)
        kernels.set_backend("cython")
        b = kernels.loglik_matrix(model, d, inner, y)
    finally:
        kernels.set_backend(prev)
    assert a.shape == (7, 9)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    # and against the reference per-sample likelihood
    ref = log_likelihood(model, d, inner, y[:, None])
    np.testing.assert_allclose(a, ref, rtol=1e-12, atol=1e-12)
