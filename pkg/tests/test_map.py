import math

import numpy as np
import pytest
from scipy.special import digamma, gammaln, softmax

from wdr.data import Dataset, Known, Missing, Observation, Observed, RightCensored, TimeKind
from wdr.errors import ParameterError, RejectedObservationError
from wdr.map_estimator import (
    MapConfig,
    MapParams,
    draw_lambda_tilde,
    fit_map,
    gradients,
    grad_a_beta,
    grad_r,
    log_posterior_estimate,
    log_prior,
    per_observation_likelihood_terms,
)
from wdr.model import ModelState
from wdr.rng import RngStream

from oracles import marginal_loglik_quad


def mixed_data(n=12, J=2, seed=0, P=2):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, P))
    kind = np.array([TimeKind.OBSERVED, TimeKind.CENSORED, TimeKind.MISSING] * (n // 3))
    time = np.where(kind == TimeKind.MISSING, 0.0, g.exponential(size=n) + 0.1)
    event = np.where(kind == TimeKind.CENSORED, 0, g.integers(1, J + 1, size=n))
    event[0] = 0  # observed time, unknown type
    return Dataset.from_covariates(X, time, kind, event, J)


def random_params(J=2, K=3, P=3, seed=1):
    g = np.random.default_rng(seed)
    return MapParams.natural(g.uniform(0.6, 2.0), g.normal(0, 0.5, (J, K, P)),
                             g.uniform(0.3, 2.0, (J, K)))


# -- case table ---------------------------------------------------------------

def test_uncensored_plug_in():
    p = MapParams.natural(1.0, [[[0.0]]], [[1.0]])
    obs = Observation(np.array([1.0]), Observed(1.0), Known(1))
    lpt, lpy = per_observation_likelihood_terms(p, obs, np.zeros((1, 1, 1)))
    assert math.exp(lpt[0] + lpy[0]) == pytest.approx(math.exp(-1.0), rel=1e-14)


def test_censored_term():
    p = random_params()
    log_lam = draw_lambda_tilde(p, 1, 5, RngStream(2))[0]
    x = np.array([1.0, 0.3, -0.2])
    T = 1.7
    lpt, lpy = per_observation_likelihood_terms(p, Observation(x, RightCensored(T), Missing()), log_lam)
    z = np.einsum("p,jkp->jk", x, p.beta)
    expected = -T**p.a * (np.exp(log_lam) * np.exp(z)).sum(axis=(1, 2))
    assert np.allclose(lpt, expected, rtol=1e-12)
    assert np.all(lpy == 0.0)


def test_missing_time_known_type():
    p = random_params()
    log_lam = draw_lambda_tilde(p, 1, 4, RngStream(3))[0]
    x = np.array([1.0, 0.1, 0.2])
    lpt, lpy = per_observation_likelihood_terms(p, Observation(x, Missing(), Known(2)), log_lam)
    assert np.all(lpt == 0.0)
    rates = np.exp(log_lam) * np.exp(np.einsum("p,jkp->jk", x, p.beta))
    assert np.allclose(lpy, np.log(rates[:, 1].sum(axis=1) / rates.sum(axis=(1, 2))))


def test_both_missing_rejected():
    p = random_params()
    with pytest.raises(RejectedObservationError):
        per_observation_likelihood_terms(p, Observation(np.ones(3), Missing(), Missing()),
                                         np.zeros((2, 2, 3)))
    d = Dataset.from_covariates(np.zeros((2, 2)), [1.0, 0.0], [0, 2], [1, 0], 2)
    with pytest.raises(RejectedObservationError):
        log_posterior_estimate(p, d, RngStream(0))


def test_config_validation():
    with pytest.raises(ParameterError):
        MapConfig(M=1)
    with pytest.raises(ParameterError):
        MapConfig(minibatch_size=0)


# -- log posterior --------------------------------------------------------------

@pytest.mark.parametrize("kind", ["observed", "censored"])
def test_estimate_converges_to_quadrature(kind):
    a, r, b, t = 1.4, 0.8, 0.3, 0.9
    p = MapParams.natural(a, [[[b]]], [[r]])
    tk = TimeKind.OBSERVED if kind == "observed" else TimeKind.CENSORED
    d = Dataset.from_covariates(np.zeros((1, 0)), [t], [tk], [1 if kind == "observed" else 0], 1)
    cfg = MapConfig(K=1, M=10**5)
    est = log_posterior_estimate(p, d, RngStream(4), cfg) - log_prior(p, cfg)
    exact = marginal_loglik_quad(a, r, b, t, kind)
    assert abs(est - exact) < 0.01 * abs(exact)


def test_constant_shift_of_log_terms():
    # Rescaling every observed time by s and moving the intercept by
    # -a log s leaves t^a e^z fixed and adds -log s to each log p.
    n = 9
    g = np.random.default_rng(5)
    X, t = g.random((n, 1)), g.exponential(size=n) + 0.2
    d1 = Dataset.from_covariates(X, t, np.zeros(n), g.integers(1, 3, n), 2)
    s = 3.7
    d2 = Dataset.from_covariates(X, s * t, np.zeros(n), d1.event, 2)
    p1 = random_params(P=2)
    p2 = p1.copy()
    p2.beta[:, :, 0] -= p1.a * math.log(s)
    cfg = MapConfig(K=3)
    log_lam = draw_lambda_tilde(p1, n, 10, RngStream(6))
    v1 = log_posterior_estimate(p1, d1, config=cfg, log_lam=log_lam) - log_prior(p1, cfg)
    v2 = log_posterior_estimate(p2, d2, config=cfg, log_lam=log_lam) - log_prior(p2, cfg)
    assert v2 - v1 == pytest.approx(-n * math.log(s), rel=1e-10)


def test_prior_closed_form():
    J, K, P = 2, 4, 3
    p = MapParams.natural(1.3, np.zeros((J, K, P)), np.ones((J, K)))
    cfg = MapConfig(K=K, prior_r="gamma_unit")
    expected = J * K * (-gammaln(1.0 / K) - 1.0)
    assert log_prior(p, cfg) == pytest.approx(expected, rel=1e-12)


def test_minibatch_scaling():
    d = mixed_data(12)
    p = random_params()
    cfg = MapConfig(K=3)
    idx = np.arange(6)
    log_lam = draw_lambda_tilde(p, 6, 10, RngStream(7))
    full = log_posterior_estimate(p, d.subset(idx), config=cfg, log_lam=log_lam) - log_prior(p, cfg)
    half = log_posterior_estimate(p, d, config=cfg, idx=idx, log_lam=log_lam) - log_prior(p, cfg)
    assert half == pytest.approx(2 * full, rel=1e-12)


# -- gradients --------------------------------------------------------------------

def _frozen(p, d, M=10, seed=8):
    return draw_lambda_tilde(p, d.n, M, RngStream(seed))


@pytest.mark.parametrize("seed", range(3))
def test_gradient_matches_finite_difference(seed):
    d = mixed_data(12, seed=seed)
    p = random_params(seed=seed + 10)
    cfg = MapConfig(K=3)
    log_lam = _frozen(p, d)
    f = lambda q: log_posterior_estimate(q, d, config=cfg, log_lam=log_lam)
    g = gradients(p, d, config=cfg, log_lam=log_lam)
    h = 1e-6
    q1, q2 = p.copy(), p.copy()
    q1.log_a, q2.log_a = math.log(p.a + h), math.log(p.a - h)
    assert g.a == pytest.approx((f(q1) - f(q2)) / (2 * h), rel=1e-5)
    for idx in np.ndindex(p.beta.shape):
        q1, q2 = p.copy(), p.copy()
        q1.beta[idx] += h
        q2.beta[idx] -= h
        assert g.beta[idx] == pytest.approx((f(q1) - f(q2)) / (2 * h), rel=1e-5, abs=1e-8)
    ga, gb = grad_a_beta(p, d, config=cfg, log_lam=log_lam)
    assert ga == g.a and np.array_equal(gb, g.beta)


def test_censored_only_beta_gradient():
    T = 1.3
    x = np.array([[0.4, -0.7]])
    d = Dataset(x, [T], [TimeKind.CENSORED], [0], 1, includes_intercept=False)
    p = MapParams.natural(1.6, [[[0.2, 0.5]]], [[0.9]])
    log_lam = _frozen(p, d, M=7)
    g = gradients(p, d, config=MapConfig(K=1), log_lam=log_lam, include_prior=False)
    rate = np.exp(log_lam[0, :, 0, 0] + x[0] @ p.beta[0, 0])
    w = softmax(-T**p.a * rate)
    expected = -T**p.a * np.sum(w * rate) * x[0]
    assert np.allclose(g.beta[0, 0], expected, rtol=1e-12)


def test_r_gradient_self_normalized_weights():
    d = Dataset.from_covariates(np.zeros((1, 0)), [0.8], [TimeKind.OBSERVED], [1], 1)
    p = MapParams.natural(1.2, [[[0.1]]], [[0.7]])
    log_lam = _frozen(p, d, M=9)
    lam = np.exp(log_lam[0, :, 0, 0] + 0.1)
    log_p = math.log(1.2) + 0.2 * math.log(0.8) + np.log(lam) - 0.8**1.2 * lam
    w = np.exp(log_p - log_p.max())
    w /= w.sum()
    assert w.sum() == pytest.approx(1.0, abs=1e-15) and np.all((w >= 0) & (w <= 1))
    g = gradients(p, d, config=MapConfig(K=1), log_lam=log_lam, include_prior=False)
    assert g.r[0, 0] == pytest.approx(np.sum(w * log_lam[0, :, 0, 0]) - digamma(0.7), rel=1e-12)


def test_single_draw_is_plain_score():
    d = mixed_data(6)
    p = random_params()
    log_lam = _frozen(p, d, M=1)
    g = gradients(p, d, config=MapConfig(K=3), log_lam=log_lam, include_prior=False)
    assert np.allclose(g.r, (log_lam[:, 0] - digamma(p.r)).sum(axis=0), rtol=1e-12)


def test_r_gradient_matches_quadrature():
    a, r, b = 1.3, 0.9, 0.2
    times = np.array([0.5, 1.1, 1.8])
    kinds = np.array([TimeKind.OBSERVED, TimeKind.CENSORED, TimeKind.OBSERVED])
    exact = lambda rr: sum(marginal_loglik_quad(a, rr, b, t, "observed" if k == 0 else "censored")
                           for t, k in zip(times, kinds))
    h = 1e-4
    fd = (exact(r + h) - exact(r - h)) / (2 * h)
    reps = 1000
    d = Dataset.from_covariates(np.zeros((3 * reps, 0)), np.tile(times, reps), np.tile(kinds, reps),
                                np.tile(np.where(kinds == 0, 1, 0), reps), 1)
    p = MapParams.natural(a, [[[b]]], [[r]])
    cfg = MapConfig(K=1, M=100)
    gen = RngStream(9).gen
    total = sum(grad_r(p, d, gen, cfg).sum() for _ in range(100))
    prior = gradients(p, d.subset([0]), config=cfg, log_lam=np.zeros((1, 2, 1, 1)))
    prior_r = prior.r - gradients(p, d.subset([0]), config=cfg, log_lam=np.zeros((1, 2, 1, 1)),
                                  include_prior=False).r
    mean = (total - 100 * prior_r.sum()) / (100 * reps)
    assert mean == pytest.approx(fd, rel=0.05)


def test_reparameterized_gradient_chain_rule():
    d = mixed_data(9)
    p = random_params()
    cfg = MapConfig(K=3)
    log_lam = _frozen(p, d)
    g = gradients(p, d, config=cfg, log_lam=log_lam)
    flat = g.unconstrained(p)
    h = 1e-6
    q1, q2 = p.copy(), p.copy()
    q1.log_a += h
    q2.log_a -= h
    f = lambda q: log_posterior_estimate(q, d, config=cfg, log_lam=log_lam)
    assert flat[0] == pytest.approx((f(q1) - f(q2)) / (2 * h), rel=1e-5)
    assert np.allclose(flat[1 + p.beta.size:], (g.r * p.r).ravel())


# -- fitting ----------------------------------------------------------------------

def test_zero_learning_rate_keeps_params():
    d = mixed_data(12)
    p = random_params()
    fit = fit_map(d, MapConfig(K=3, learning_rate=0.0, n_epochs=3, minibatch_size=5), RngStream(1), p)
    assert fit.params.log_a == p.log_a
    assert np.array_equal(fit.params.beta, p.beta) and np.array_equal(fit.params.log_r, p.log_r)
    assert len(fit.trace) == 3


def test_fit_deterministic_given_seed():
    d = mixed_data(30)
    cfg = MapConfig(K=3, n_epochs=4, minibatch_size=10)
    f1 = fit_map(d, cfg, RngStream(3))
    f2 = fit_map(d, cfg, RngStream(3))
    assert f1.trace == f2.trace and np.array_equal(f1.params.beta, f2.params.beta)


def test_exponential_rate_mle():
    n = 1000
    t = RngStream(11).gen.exponential(1 / 2.5, n)
    d = Dataset.from_covariates(np.zeros((n, 0)), t, np.zeros(n), np.ones(n, dtype=int), 1)
    mle = n / t.sum()
    r = 1e6
    start = MapParams.natural(1.0, [[[math.log(mle / r) + 1.0]]], [[r]])
    cfg = MapConfig(K=1, M=10, learning_rate=5e-4, lr_decay="none", minibatch_size=n,
                    n_epochs=200, fixed=("a", "r"))
    fit = fit_map(d, cfg, RngStream(12), start)
    rate = fit.params.r[0, 0] * math.exp(fit.params.beta[0, 0, 0])
    assert fit.params.a == 1.0
    assert rate == pytest.approx(mle, rel=0.02)


def test_params_json_matches_state_schema():
    p = random_params()
    s = ModelState.from_json(p.to_json())
    assert s.alpha is None and s.gamma0 is None
    back = MapParams.from_json(p.to_json())
    assert np.allclose(back.beta, p.beta) and back.a == pytest.approx(p.a)
