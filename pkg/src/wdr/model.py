"""Parameters, priors and closed-form model functions of Weibull delegate
racing (WDR).

Event j has K sub-events ("atoms").  Atom (j, k) carries a gamma-process
weight ``r[j, k]`` and coefficients ``beta[j, k]``; subject i's atom rate is
``lam[i, j, k] ~ Gamma(r[j, k], exp(x_i' beta[j, k]))`` and all latent times
share the Weibull shape ``a``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .distributions import sample_gamma, sample_log_gamma
from .errors import NumericalError, ParameterError
from .rng import as_generator


@dataclass
class HyperParams:
    J: int = 2
    K: int = 10
    a0: float = 1.0
    b0: float = 1.0
    e0: float = 0.01
    f0: float = 0.01
    e1: float = 0.01
    f1: float = 0.01
    # Optional proper Gamma(shape, rate) prior on the Weibull shape; None is
    # the improper flat prior used for fitting.
    a_prior: tuple[float, float] | None = None

    def __post_init__(self):
        if self.K < 1 or self.J < 1:
            raise ParameterError("J and K must be at least 1")
        for name in ("a0", "b0", "e0", "f0", "e1", "f1"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")


@dataclass
class ModelState:
    a: float
    r: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray | None = None
    gamma0: np.ndarray | None = None
    c0: np.ndarray | None = None
    active: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.a = float(self.a)
        self.r = np.asarray(self.r, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        for name in ("alpha", "gamma0", "c0"):
            if getattr(self, name) is not None:
                setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.active is None:
            self.active = np.ones(self.r.shape, dtype=bool)
        self.active = np.asarray(self.active, dtype=bool)
        if not self.a > 0:
            raise ParameterError(f"Weibull shape must be positive, got {self.a}")
        if self.beta.shape[:2] != self.r.shape:
            raise ParameterError("beta must have shape (J, K, P) matching r (J, K)")

    @property
    def J(self) -> int:
        return self.r.shape[0]

    @property
    def K(self) -> int:
        return self.r.shape[1]

    @property
    def P(self) -> int:
        return self.beta.shape[2]

    def copy(self) -> "ModelState":
        cp = lambda v: None if v is None else np.array(v, copy=True)
        return ModelState(self.a, cp(self.r), cp(self.beta), cp(self.alpha),
                          cp(self.gamma0), cp(self.c0), cp(self.active))

    def to_dict(self) -> dict:
        out = {"a": self.a, "r": self.r.tolist(), "beta": self.beta.tolist()}
        for name in ("alpha", "gamma0", "c0"):
            v = getattr(self, name)
            if v is not None:
                out[name] = np.asarray(v).tolist()
        out["active"] = self.active.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelState":
        get = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)
        active = d.get("active")
        return cls(d["a"], get("r"), get("beta"), get("alpha"), get("gamma0"), get("c0"),
                   None if active is None else np.asarray(active, dtype=bool))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelState":
        return cls.from_dict(json.loads(text))


@dataclass
class AugmentedState:
    """Per-observation latent variables of the sampler.

    ``y`` is 1-based like the data; ``kappa`` is the 0-based winning atom
    within event ``y``.
    """

    t: np.ndarray
    y: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    omega: np.ndarray | None = None
    l: np.ndarray | None = None
    p: np.ndarray | None = None

    @property
    def counts(self) -> np.ndarray:
        """n_ijk indicators as a dense (n, J, K) array."""
        n, J, K = self.lam.shape
        out = np.zeros((n, J, K), dtype=np.int64)
        out[np.arange(n), self.y - 1, self.kappa] = 1
        return out

    @property
    def m(self) -> np.ndarray:
        n, J, K = self.lam.shape
        return np.bincount((self.y - 1) * K + self.kappa, minlength=J * K).reshape(J, K)


def linear_predictor(X, beta) -> np.ndarray:
    """x_i' beta_jk for every subject and atom, shape (n, J, K)."""
    return np.einsum("ip,jkp->ijk", np.atleast_2d(X), beta)


def total_rate(lam, active) -> np.ndarray:
    """Per-subject rate sum over active atoms, shape lam.shape[:-2].

    Shared by the likelihood, the time augmentation and CIF prediction.
    """
    return np.where(active, lam, 0.0).sum(axis=(-2, -1))


def softplus(x):
    return np.logaddexp(0.0, x)


def log_joint_likelihood(state: ModelState, aug: AugmentedState, X) -> float:
    """log P(t, y, kappa | lam, a) summed over subjects (fully factorized form)."""
    t = np.asarray(aug.t, dtype=float)
    if np.any(~(t > 0)):
        raise NumericalError("imputed times must be positive")
    a = state.a
    n = t.shape[0]
    lam_win = aug.lam[np.arange(n), aug.y - 1, aug.kappa]
    rate = total_rate(aug.lam, state.active)
    with np.errstate(divide="ignore"):
        terms = np.log(lam_win) + np.log(a) + (a - 1.0) * np.log(t) - t**a * rate
    return float(terms.sum())


def _event_terms(x, state, j):
    x = np.asarray(x, dtype=float)
    z = x @ state.beta[j - 1].T
    act = state.active[j - 1]
    return z[act], state.r[j - 1][act]


def survival_function(x, t, state: ModelState, j: int):
    """S_j(t) = prod_k (1 + t^a e^{x'beta_jk})^{-r_jk} over active atoms."""
    z, r = _event_terms(x, state, j)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        loga_t = state.a * np.log(t)
    psi = loga_t[..., None] + z
    out = np.exp(-(r * softplus(psi)).sum(axis=-1))
    return out if out.ndim else float(out)


def hazard_function(x, t, state: ModelState, j: int):
    """h_j(t) = sum_k a r_jk t^{a-1} / (t^a + e^{-x'beta_jk}).

    At t = 0 the value is +inf when a < 1, sum_k r_jk e^{x'beta_jk} when
    a = 1 and 0 when a > 1.
    """
    z, r = _event_terms(x, state, j)
    a = state.a
    t = np.asarray(t, dtype=float)
    tt = np.where(t > 0, t, 1.0)
    psi = a * np.log(tt)[..., None] + z
    h = (a * r * expit(psi)).sum(axis=-1) / tt
    if np.any(t == 0):
        at_zero = np.inf if a < 1 else (float((r * np.exp(z)).sum()) if a == 1 else 0.0)
        h = np.where(t == 0, at_zero, h)
    return h if np.ndim(h) else float(h)


def sample_from_prior(hyper: HyperParams, P: int, rng) -> ModelState:
    gen = as_generator(rng)
    J, K = hyper.J, hyper.K
    # Draws in log space: the default hyperpriors put mass far below the
    # smallest double.
    tiny, huge = np.finfo(float).tiny, 1e300
    log_g0 = sample_log_gamma(np.full(J, hyper.e0), gen) - np.log(hyper.f0)
    log_c0 = sample_log_gamma(np.full(J, hyper.e1), gen) - np.log(hyper.f1)
    gamma0 = np.clip(np.exp(log_g0), tiny, huge)
    c0 = np.clip(np.exp(log_c0), tiny, huge)
    shape = np.maximum(np.repeat((gamma0 / K)[:, None], K, axis=1), tiny)
    with np.errstate(over="ignore"):
        r = np.clip(np.exp(sample_log_gamma(shape, gen) - log_c0[:, None]), tiny, huge)
    alpha = np.asarray(sample_gamma(hyper.a0, 1.0 / hyper.b0, gen, size=(J, K, P)))
    beta = gen.standard_normal((J, K, P)) / np.sqrt(alpha)
    if hyper.a_prior is None:
        a = 1.0
    else:
        a = float(sample_gamma(hyper.a_prior[0], 1.0 / hyper.a_prior[1], gen))
    return ModelState(a, r, beta, alpha, gamma0, c0)
