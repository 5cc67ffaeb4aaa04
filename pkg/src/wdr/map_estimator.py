"""Point estimation of (a, beta, r) by stochastic gradient ascent on a
Monte-Carlo estimate of the log posterior.

The atom rates are integrated out by simulation: for each observation we
draw ``M`` sets lam~_jk ~ Gamma(r_jk, 1) and average the conditional
likelihood p(t_i, y_i | lam~ e^{x'beta}).  Gradients with respect to (a, beta)
differentiate the per-draw log terms; the gradient with respect to r uses
the score function of the gamma draws.  Both are self-normalized with
weights w_m proportional to the per-draw likelihood, computed from one set
of draws.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, logsumexp, softmax
from scipy.stats import gamma as gamma_dist

from .data import Dataset, Observation, Observed, RightCensored, Known, TimeKind
from .distributions import sample_log_gamma
from .errors import ConvergenceError, ParameterError, RejectedObservationError
from .model import ModelState
from .rng import as_generator

R_PRIORS = ("gamma_small", "gamma_unit", "l2")
PARAM_NAMES = ("a", "beta", "r")


@dataclass
class MapConfig:
    K: int = 10
    M: int = 10
    learning_rate: float = 0.01
    lr_decay: str = "sqrt"  # "sqrt" (lr / sqrt(epoch)) or "none"
    adaptive: bool = False  # per-coordinate Adagrad scaling
    minibatch_size: int = 100
    n_epochs: int = 100
    prior_r: str = "gamma_small"
    r_l2: float = 0.001
    student_t_dof: float = 3.0
    clip_norm: float = 100.0
    init_r: float = 1.0
    init_a: float = 1.0
    fixed: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.M < 2:
            raise ParameterError("M must be at least 2")
        if self.minibatch_size < 1:
            raise ParameterError("minibatch_size must be at least 1")
        if self.prior_r not in R_PRIORS:
            raise ParameterError(f"prior_r must be one of {R_PRIORS}")
        if self.lr_decay not in ("sqrt", "none"):
            raise ParameterError("lr_decay must be 'sqrt' or 'none'")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be nonnegative")
        unknown = set(self.fixed) - set(PARAM_NAMES)
        if unknown:
            raise ParameterError(f"cannot fix unknown parameters {sorted(unknown)}")
        self.fixed = tuple(self.fixed)

    def r_prior_gamma(self):
        """(shape, scale) of the gamma r-prior, or None for the L2 penalty."""
        if self.prior_r == "gamma_small":
            return 0.01 / self.K, 1.0 / 0.01
        if self.prior_r == "gamma_unit":
            return 1.0 / self.K, 1.0
        return None


@dataclass
class MapParams:
    """Unconstrained parameters: log a, beta (J, K, P), log r (J, K)."""

    log_a: float
    beta: np.ndarray
    log_r: np.ndarray

    @property
    def a(self) -> float:
        return math.exp(self.log_a)

    @property
    def r(self) -> np.ndarray:
        return np.exp(self.log_r)

    @property
    def J(self):
        return self.log_r.shape[0]

    @property
    def K(self):
        return self.log_r.shape[1]

    @classmethod
    def natural(cls, a, beta, r) -> "MapParams":
        return cls(math.log(a), np.array(beta, dtype=float), np.log(np.asarray(r, dtype=float)))

    def copy(self) -> "MapParams":
        return MapParams(self.log_a, self.beta.copy(), self.log_r.copy())

    def to_model_state(self) -> ModelState:
        return ModelState(self.a, self.r, self.beta)

    def to_json(self) -> str:
        return self.to_model_state().to_json()

    @classmethod
    def from_json(cls, text: str) -> "MapParams":
        d = json.loads(text)
        return cls.natural(d["a"], d["beta"], d["r"])


@dataclass
class MapGradient:
    """Natural-space gradients (d/da, d/dbeta, d/dr) and the estimate they
    belong to."""

    a: float
    beta: np.ndarray
    r: np.ndarray
    log_posterior: float = float("nan")

    def unconstrained(self, params: MapParams) -> np.ndarray:
        """Flat gradient over (log a, beta, log r) by the chain rule."""
        return np.concatenate([[self.a * params.a], self.beta.ravel(), (self.r * params.r).ravel()])


def draw_lambda_tilde(params: MapParams, n_rows: int, M: int, rng) -> np.ndarray:
    """log lam~ with lam~_jk ~ Gamma(r_jk, 1), shape (n_rows, M, J, K)."""
    shape = np.broadcast_to(params.r, (n_rows, M) + params.r.shape)
    return sample_log_gamma(shape, as_generator(rng))


def _check_rows(time_kind, event):
    bad = (time_kind == TimeKind.MISSING) & (event == 0)
    if np.any(bad):
        raise RejectedObservationError(
            f"row {int(np.flatnonzero(bad)[0])} has neither a time nor an event type")


def _case_terms(params, X, time, time_kind, event, log_lam):
    """Per-draw log p_t, log p_y and the pieces their gradients need."""
    a = params.a
    z = np.einsum("bp,jkp->bjk", X, params.beta)
    u = log_lam + z[:, None]  # log rates, (B, M, J, K)
    log_rate_j = logsumexp(u, axis=3)
    log_rate = logsumexp(log_rate_j, axis=2)  # (B, M)
    obs = time_kind == TimeKind.OBSERVED
    timed = time_kind != TimeKind.MISSING
    known = event > 0
    log_time = np.log(np.where(timed, time, 1.0))
    ta = np.where(timed, np.exp(a * log_time), 0.0)  # t^a, 0 when missing
    rate = np.exp(log_rate)
    log_pt = -ta[:, None] * rate
    log_pt = log_pt + np.where(obs, math.log(a) + (a - 1.0) * log_time, 0.0)[:, None]
    log_pt = log_pt + np.where(obs[:, None], log_rate, 0.0)
    y0 = np.where(known, event - 1, 0)
    B = X.shape[0]
    log_rate_y = log_rate_j[np.arange(B), :, y0]  # (B, M)
    log_py = np.where(known[:, None], log_rate_y - log_rate, 0.0)
    return dict(u=u, log_rate=log_rate, log_rate_j=log_rate_j, log_rate_y=log_rate_y,
                obs=obs, known=known, y0=y0, ta=ta, log_time=log_time, rate=rate,
                log_pt=log_pt, log_py=log_py)


def per_observation_likelihood_terms(params: MapParams, observation: Observation, log_lam):
    """(log p_t, log p_y) for each of the draws ``log_lam`` (M, J, K)."""
    if observation.both_missing:
        raise RejectedObservationError("observation has neither a time nor an event type")
    tm = observation.time
    if isinstance(tm, Observed):
        kind, t = TimeKind.OBSERVED, tm.t
    elif isinstance(tm, RightCensored):
        kind, t = TimeKind.CENSORED, tm.T
    else:
        kind, t = TimeKind.MISSING, 0.0
    ev = observation.event.j if isinstance(observation.event, Known) else 0
    X = np.atleast_2d(np.asarray(observation.x, dtype=float))
    terms = _case_terms(params, X, np.array([t]), np.array([kind]), np.array([ev]),
                        np.asarray(log_lam)[None])
    return terms["log_pt"][0], terms["log_py"][0]


def log_prior(params: MapParams, config: MapConfig) -> float:
    nu = config.student_t_dof
    lp = float(np.sum(-(nu + 1.0) / 2.0 * np.log1p(params.beta**2 / nu)))
    g = config.r_prior_gamma()
    if g is None:
        lp -= config.r_l2 * float(np.linalg.norm(params.r))
    else:
        lp += float(np.sum(gamma_dist.logpdf(params.r, g[0], scale=g[1])))
    return lp


def grad_log_prior(params: MapParams, config: MapConfig) -> MapGradient:
    nu = config.student_t_dof
    gb = -(nu + 1.0) * params.beta / (nu + params.beta**2)
    r = params.r
    g = config.r_prior_gamma()
    if g is None:
        gr = -config.r_l2 * r / np.linalg.norm(r)
    else:
        gr = (g[0] - 1.0) / r - 1.0 / g[1]
    return MapGradient(0.0, gb, gr)


def _batch(data: Dataset, idx):
    idx = np.arange(data.n) if idx is None else np.asarray(idx)
    tk, ev = data.time_kind[idx], data.event[idx]
    _check_rows(tk, ev)
    return data.X[idx], data.time[idx], tk, ev


def _data_part(params, data, idx, log_lam, rng, M):
    X, time, tk, ev = _batch(data, idx)
    if log_lam is None:
        log_lam = draw_lambda_tilde(params, X.shape[0], M, rng)
    terms = _case_terms(params, X, time, tk, ev, log_lam)
    log_p = terms["log_pt"] + terms["log_py"]
    row_lse = logsumexp(log_p, axis=1)
    ok = np.isfinite(row_lse)
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} observations underflowed in every draw; skipped",
                      RuntimeWarning, stacklevel=3)
    scale = data.n / X.shape[0]
    return X, log_lam, terms, log_p, row_lse, ok, scale


def log_posterior_estimate(params: MapParams, data: Dataset, rng=None,
                           config: MapConfig | None = None, idx=None, log_lam=None) -> float:
    """sum_i log[(1/M) sum_m p_t p_y] scaled by n/|batch|, plus log priors.

    ``log_lam`` freezes the draws (shape (batch, M, J, K)).
    """
    config = config or MapConfig(K=params.K)
    M = config.M if log_lam is None else np.shape(log_lam)[1]
    _, log_lam, _, _, row_lse, ok, scale = _data_part(params, data, idx, log_lam, rng, M)
    data_term = float(np.sum(row_lse[ok] - math.log(log_lam.shape[1])))
    return scale * data_term + log_prior(params, config)


def gradients(params: MapParams, data: Dataset, rng=None, config: MapConfig | None = None,
              idx=None, log_lam=None, include_prior: bool = True) -> MapGradient:
    """Self-normalized gradients over (a, beta, r) from one set of draws."""
    config = config or MapConfig(K=params.K)
    M = config.M if log_lam is None else np.shape(log_lam)[1]
    X, log_lam, T, log_p, row_lse, ok, scale = _data_part(params, data, idx, log_lam, rng, M)
    w = np.zeros_like(log_p)
    w[ok] = softmax(log_p[ok], axis=1)  # (B, M)

    # d log p / d u_jk with u the log atom rate.
    u = T["u"]
    lam = np.exp(u)
    share = np.exp(u - T["log_rate"][..., None, None])
    g_u = -T["ta"][:, None, None, None] * lam
    g_u += np.where(T["obs"], 1.0, 0.0)[:, None, None, None] * share
    known = T["known"]
    if known.any():
        B, _, J, _ = u.shape
        in_y = np.arange(J)[None, :] == T["y0"][:, None]  # (B, J)
        within = np.exp(u - T["log_rate_y"][..., None, None]) * in_y[:, None, :, None]
        g_u += np.where(known, 1.0, 0.0)[:, None, None, None] * (within - share)
    wg = np.einsum("bm,bmjk->bjk", w, g_u)
    g_beta = np.einsum("bjk,bp->jkp", wg, X)

    # d log p / d a: observed rows 1/a + log t - t^a log t Lambda, censored
    # rows -T^a log T Lambda.
    a = params.a
    dlp_da = -(T["ta"] * T["log_time"])[:, None] * T["rate"]
    dlp_da += np.where(T["obs"], 1.0 / a + T["log_time"], 0.0)[:, None]
    g_a = float(np.sum(w * dlp_da))

    # Score of the gamma draws: log lam~ - digamma(r).
    score = log_lam - digamma(params.r)
    g_r = np.einsum("bm,bmjk->jk", w, score)

    value = scale * float(np.sum(row_lse[ok] - math.log(M)))
    grad = MapGradient(scale * g_a, scale * g_beta, scale * g_r, value)
    if include_prior:
        pg = grad_log_prior(params, config)
        grad.beta = grad.beta + pg.beta
        grad.r = grad.r + pg.r
        grad.log_posterior = value + log_prior(params, config)
    return grad


def grad_a_beta(params, data, rng=None, config=None, idx=None, log_lam=None):
    g = gradients(params, data, rng, config, idx, log_lam)
    return g.a, g.beta


def grad_r(params, data, rng=None, config=None, idx=None, log_lam=None):
    return gradients(params, data, rng, config, idx, log_lam).r


def initial_params(data: Dataset, config: MapConfig, rng) -> MapParams:
    """Small random coefficients with each event's intercept set so the
    total rate of its atoms matches the crude event rate."""
    gen = as_generator(rng)
    J, K, P = data.J, config.K, data.P
    beta = 0.1 * gen.standard_normal((J, K, P))
    r = np.full((J, K), config.init_r)
    if data.includes_intercept:
        timed = data.time_kind != TimeKind.MISSING
        exposure = float(np.sum(data.time[timed] ** config.init_a))
        counts = np.bincount(data.event, minlength=J + 1)[1:]
        crude = np.maximum(counts, 0.5) / max(exposure, 1e-12)
        beta[:, :, 0] = np.log(crude / r.sum(axis=1))[:, None]
    return MapParams.natural(config.init_a, beta, r)


@dataclass
class MapFit:
    params: MapParams
    trace: list = field(default_factory=list)  # per-epoch log posterior estimate
    config: MapConfig | None = None

    def to_json(self) -> str:
        d = self.params.to_model_state().to_dict()
        d["trace"] = self.trace
        d["config"] = asdict(self.config) if self.config else None
        return json.dumps(d)


def _free_mask(params: MapParams, fixed) -> np.ndarray:
    nb = params.beta.size
    mask = np.ones(1 + nb + params.log_r.size, dtype=bool)
    if "a" in fixed:
        mask[0] = False
    if "beta" in fixed:
        mask[1:1 + nb] = False
    if "r" in fixed:
        mask[1 + nb:] = False
    return mask


def _apply(params: MapParams, step: np.ndarray, fixed) -> MapParams:
    J, K, P = params.beta.shape
    nb = J * K * P
    out = params.copy()
    if "a" not in fixed:
        out.log_a += float(step[0])
    if "beta" not in fixed:
        out.beta += step[1:1 + nb].reshape(J, K, P)
    if "r" not in fixed:
        out.log_r += step[1 + nb:].reshape(J, K)
    return out


def fit_map(data: Dataset, config: MapConfig, rng=None, params: MapParams | None = None) -> MapFit:
    """Gradient ascent over minibatches; deterministic given the seed."""
    gen = as_generator(config.seed if rng is None else rng)
    _check_rows(data.time_kind, data.event)
    if params is None:
        params = initial_params(data, config, gen)
    trace = []
    accum = None
    free = _free_mask(params, config.fixed)
    for epoch in range(1, config.n_epochs + 1):
        lr = config.learning_rate / (math.sqrt(epoch) if config.lr_decay == "sqrt" else 1.0)
        order = gen.permutation(data.n)
        for start in range(0, data.n, config.minibatch_size):
            idx = np.sort(order[start:start + config.minibatch_size])
            g = gradients(params, data, gen, config, idx).unconstrained(params) * free
            if not np.all(np.isfinite(g)):
                raise ConvergenceError(f"non-finite gradient in epoch {epoch}; trace {trace}")
            norm = np.linalg.norm(g)
            if norm > config.clip_norm:
                g *= config.clip_norm / norm
            if config.adaptive:
                accum = g**2 if accum is None else accum + g**2
                g = g / (np.sqrt(accum) + 1e-8)
            params = _apply(params, lr * g, config.fixed)
        lp = log_posterior_estimate(params, data, gen, config)
        trace.append(lp)
        if not math.isfinite(lp):
            err = ConvergenceError(f"log posterior diverged in epoch {epoch}")
            err.trace = trace
            raise err
    return MapFit(params, trace, config)
