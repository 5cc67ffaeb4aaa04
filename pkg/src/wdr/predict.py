"""Cumulative incidence and event-type probabilities from posterior draws or
a point estimate, and the series form of the marginal event-time CDF."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
import numpy as np
from scipy.special import logsumexp
from scipy.optimize import brentq

from .distributions import sample_log_gamma
from .errors import ConvergenceError, ParameterError
from .model import ModelState
from .rng import as_generator

N_MC_DEFAULT = 200


def _states(draws) -> list[ModelState]:
    if isinstance(draws, ModelState):
        return [draws]
    states = getattr(draws, "states", draws)
    states = list(states)
    if not states:
        raise ParameterError("need at least one posterior draw")
    return states


def _log_event_rates(X, state: ModelState, n_mc, gen):
    """Simulated log Lambda_ij = log sum_k lam_ijk, shape (n_mc, n, J).

    lam_ijk ~ Gamma(r_jk, e^{x_i' beta_jk}) over active atoms; events with no
    active atom get -inf.
    """
    X = np.atleast_2d(X)
    n = X.shape[0]
    J = state.J
    out = np.full((n_mc, n, J), -np.inf)
    for j in range(J):
        act = np.flatnonzero(state.active[j])
        if act.size == 0:
            continue
        z = X @ state.beta[j, act].T  # (n, A)
        shape = np.broadcast_to(state.r[j, act], (n_mc, n, act.size))
        log_lam = sample_log_gamma(shape, gen) + z
        out[:, :, j] = logsumexp(log_lam, axis=2)
    return out


@dataclass
class CifEstimate:
    """values[i, j, t] = CIF_{j+1}(i, times[t]) with Monte-Carlo s.e."""

    times: np.ndarray
    values: np.ndarray
    mc_se: np.ndarray
    n_mc: int
    n_draws: int
    source: str


def cif_curves(X, times, draws, n_mc: int = N_MC_DEFAULT, rng=None,
               source: str | None = None) -> CifEstimate:
    """CIF for every row of ``X`` and every time, averaged over draws and
    ``n_mc`` rate simulations per draw:

        E[ Lambda_j / Lambda * (1 - exp(-t^a Lambda)) ].
    """
    gen = as_generator(rng)
    states = _states(draws)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ParameterError("times must be nonnegative")
    X = np.atleast_2d(X)
    n, J, T = X.shape[0], states[0].J, times.size
    s1 = np.zeros((n, J, T))
    s2 = np.zeros((n, J, T))
    with np.errstate(divide="ignore"):
        log_times = np.log(times)
    for st in states:
        log_rate_j = _log_event_rates(X, st, n_mc, gen)
        log_rate = logsumexp(log_rate_j, axis=2)
        share = np.exp(log_rate_j - log_rate[..., None])  # (n_mc, n, J)
        # 1 - exp(-t^a Lambda) for each time, (n_mc, n, T)
        hit = -np.expm1(-np.exp(st.a * log_times[None, None, :] + log_rate[..., None]))
        v = share[..., None] * hit[:, :, None, :]
        s1 += v.sum(axis=0)
        s2 += (v**2).sum(axis=0)
    total = len(states) * n_mc
    mean = s1 / total
    var = np.maximum(s2 / total - mean**2, 0.0)
    label = source or ("point" if len(states) == 1 else "mcmc")
    return CifEstimate(times, mean, np.sqrt(var / total), n_mc, len(states), label)


def estimate_cif(x, t, draws, j: int, n_mc: int = N_MC_DEFAULT, rng=None) -> float:
    if t == 0:
        return 0.0
    if np.isinf(t):
        return float(event_probabilities(np.atleast_2d(x), draws, n_mc, rng)[0, j - 1])
    est = cif_curves(np.atleast_2d(x), [t], draws, n_mc, rng)
    return float(est.values[0, j - 1, 0])


def event_probabilities(X, draws, n_mc: int = N_MC_DEFAULT, rng=None) -> np.ndarray:
    """P(y_i = j) = CIF_j(i, inf) for all rows and events, shape (n, J).

    All events share the same simulated rates, so rows sum to one.
    """
    gen = as_generator(rng)
    states = _states(draws)
    X = np.atleast_2d(X)
    acc = np.zeros((X.shape[0], states[0].J))
    for st in states:
        log_rate_j = _log_event_rates(X, st, n_mc, gen)
        share = np.exp(log_rate_j - logsumexp(log_rate_j, axis=2, keepdims=True))
        acc += share.mean(axis=0)
    return acc / len(states)


def event_probability(x, draws, j: int, n_mc: int = N_MC_DEFAULT, rng=None) -> float:
    return float(event_probabilities(np.atleast_2d(x), draws, n_mc, rng)[0, j - 1])


def classify(probabilities, threshold: float = 0.5) -> np.ndarray:
    """1-based labels: argmax over events, or for two events event 1 when
    its probability exceeds ``threshold``."""
    p = np.asarray(probabilities)
    if p.shape[1] == 2:
        return np.where(p[:, 0] > threshold, 1, 2)
    return p.argmax(axis=1) + 1


# Series form of the event-time CDF when the total rate is a sum of
# independent gamma variables Gamma(r_t, 1/b_t) with rates b_t.

@dataclass
class SeriesCdfState:
    rho: float
    log_c: float
    b1: float
    delta: np.ndarray
    gamma_h: np.ndarray
    M: int

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def mass(self) -> float:
        """c * sum_{m <= M} delta_m."""
        return math.exp(self.log_c) * float(self.delta.sum())


def series_cdf_state(r_list, b_list, mass_target: float = 0.9999,
                     max_terms: int = 10_000) -> SeriesCdfState:
    r = np.asarray(r_list, dtype=float).ravel()
    b = np.asarray(b_list, dtype=float).ravel()
    if r.shape != b.shape or r.size == 0:
        raise ParameterError("r_list and b_list must be nonempty and the same length")
    if np.any(r <= 0) or np.any(b <= 0):
        raise ParameterError("shapes and rates must be positive")
    if not 0 < mass_target < 1:
        raise ParameterError("mass_target must lie in (0, 1)")
    b1 = float(b.max())
    rho = float(r.sum())
    log_c = float((r * np.log(b / b1)).sum())
    ratio = 1.0 - b / b1

    delta = [1.0]
    gamma_h = [0.0]  # index 0 unused
    total = 1.0
    m = 0
    while math.exp(log_c) * total < mass_target:
        if m >= max_terms:
            raise ConvergenceError(
                f"series needs more than {max_terms} terms "
                f"(mass {math.exp(log_c) * total:.6f} < {mass_target})")
        h = m + 1
        gamma_h.append(float((r * ratio**h).sum() / h))
        g = np.asarray(gamma_h[1:h + 1])
        d = np.asarray(delta[::-1])  # delta_{m}, ..., delta_0
        nxt = float((np.arange(1, h + 1) * g * d).sum() / h)
        if not math.isfinite(nxt):
            raise ConvergenceError("series coefficients overflowed")
        delta.append(nxt)
        total += nxt
        m += 1
    return SeriesCdfState(rho, log_c, b1, np.asarray(delta), np.asarray(gamma_h), m)


def gamma_convolution_cdf(q, a, r_list, b_list, mass_target: float = 0.9999,
                          max_terms: int = 10_000, state: SeriesCdfState | None = None):
    """P(t < q) when t ~ Weibull(a, sum_t lam_t), lam_t ~ Gamma(r_t, 1/b_t).

    The series is truncated at the smallest M capturing ``mass_target`` of
    the mixing weights and renormalized by that mass, so the result is a
    proper CDF (0 at q = 0, 1 as q grows).
    """
    st = state or series_cdf_state(r_list, b_list, mass_target, max_terms)
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ParameterError("q must be nonnegative")
    with np.errstate(divide="ignore"):
        log_w = np.log(st.b1) - np.logaddexp(a * np.log(q), np.log(st.b1))
    m = np.arange(st.M + 1)
    log_terms = np.log(st.delta) + (st.rho + m) * log_w[..., None]
    surv = np.exp(logsumexp(log_terms, axis=-1) - np.log(st.delta.sum()))
    out = np.clip(1.0 - surv, 0.0, 1.0)
    return out if out.ndim else float(out)


def sample_event_time_series(a, r_list, b_list, rng, u=None, mass_target: float = 0.9999):
    """Inverse-CDF draw: bracket by doubling, then Brent's method."""
    st = series_cdf_state(r_list, b_list, mass_target)
    if u is None:
        u = as_generator(rng).random()
    f = lambda q: gamma_convolution_cdf(q, a, None, None, state=st) - u
    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ConvergenceError("could not bracket the quantile")
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)


def mixed_weibull_cdf(q, a, r, b):
    """Closed-form CDF for a single gamma component: 1 - (b / (q^a + b))^r."""
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        log_w = np.log(b) - np.logaddexp(a * np.log(q), np.log(b))
    return -np.expm1(r * log_w)


def write_cif_csv(path, est: CifEstimate) -> None:
    """One line per (row, event, time): row,time,event,value,mc_se."""
    n, J, T = est.values.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "time", "event", "value", "mc_se"])
        for i in range(n):
            for j in range(J):
                for k in range(T):
                    w.writerow([i, repr(float(est.times[k])), j + 1,
                                repr(float(est.values[i, j, k])), repr(float(est.mc_se[i, j, k]))])


def write_event_probability_csv(path, probs) -> None:
    probs = np.asarray(probs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"p_event{j + 1}" for j in range(probs.shape[1])])
        for i, row in enumerate(probs):
            w.writerow([i] + [repr(float(v)) for v in row])
