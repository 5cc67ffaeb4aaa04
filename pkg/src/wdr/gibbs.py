"""Gibbs sampler for WDR with data augmentation for censored or missing
event times and missing event types.

One sweep runs the conditional updates

    lambda -> (y, kappa) -> t -> a -> (omega, beta) -> alpha
           -> (l, gamma0, r) -> c0 -> prune

The updates of a, beta, gamma0, r and c0 use the likelihood with the atom
rates integrated out, so the rates are redrawn at the start of every sweep,
immediately before they are used again; likewise gamma0 is drawn with r
integrated out and r is redrawn right after it.
"""
from __future__ import annotations

import json
import logging
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .data import Dataset, TimeKind
from .distributions import (
    sample_crt,
    sample_gamma,
    sample_mvn_from_precision,
    sample_polya_gamma_approx,
    sample_truncated_weibull,
    sample_categorical_rows,
)
from .errors import DegenerateError, NumericalError, ParameterError
from .model import (
    AugmentedState,
    HyperParams,
    ModelState,
    log_joint_likelihood,
    softplus,
    total_rate,
)
from .rng import as_generator
from .slice import slice_sample_unimodal

log = logging.getLogger(__name__)

TINY = np.finfo(float).tiny


@dataclass
class McmcConfig:
    n_iterations: int = 20_000
    n_burnin: int = 15_000
    thin: int = 5
    K: int = 10
    seed: int = 0
    n_chains: int = 1
    prune: bool = True

    def __post_init__(self):
        if not 0 <= self.n_burnin <= self.n_iterations:
            raise ParameterError("need 0 <= n_burnin <= n_iterations")
        if self.thin < 1:
            raise ParameterError("thin must be >= 1")

    @classmethod
    def paper_scale(cls, **kw) -> "McmcConfig":
        return cls(n_iterations=200_000, n_burnin=195_000, **kw)

    @property
    def n_retained(self) -> int:
        return len(range(self.n_burnin, self.n_iterations, self.thin))


@dataclass
class PosteriorDraws:
    states: list[ModelState] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    # Per-sweep traces over all sweeps.
    a_trace: np.ndarray | None = None
    r_sum_trace: np.ndarray | None = None
    active_trace: np.ndarray | None = None
    occupied_trace: np.ndarray | None = None
    log_joint_trace: np.ndarray | None = None
    # Fraction of post-burn-in sweeps in which each atom had m_jk > 0.
    occupancy: np.ndarray | None = None
    n_burnin: int = 0
    seconds: float = 0.0

    def __len__(self):
        return len(self.states)

    @property
    def a_samples(self) -> np.ndarray:
        return np.array([s.a for s in self.states])

    def active_subevents(self) -> np.ndarray:
        """Per event, atoms occupied (m_jk > 0) in most post-burn-in sweeps."""
        if self.occupancy is None:
            raise ValueError("no post-burn-in sweeps recorded")
        return (self.occupancy > 0.5).sum(axis=1)

    def mean_r(self) -> np.ndarray:
        return np.mean([np.where(s.active, s.r, 0.0) for s in self.states], axis=0)

    def weighty_subevents(self, share: float = 0.05) -> np.ndarray:
        """Per event, atoms whose posterior-mean weight exceeds ``share`` of the
        event's total weight."""
        r = self.mean_r()
        return (r / r.sum(axis=1, keepdims=True) > share).sum(axis=1)


class DataView:
    """Sampler-side arrays derived once from a dataset."""

    def __init__(self, dataset: Dataset):
        self.X = dataset.X
        self.n, self.P = dataset.X.shape
        self.XX = (self.X[:, :, None] * self.X[:, None, :]).reshape(self.n, -1)
        self.J = dataset.J
        kind = dataset.time_kind
        self.observed = kind == TimeKind.OBSERVED
        self.lower = np.where(self.observed, 0.0, dataset.time)  # T_ic, 0 if missing
        self.time = dataset.time
        self.event = dataset.event
        self.known_y = dataset.event > 0


def _active_atoms(state):
    return np.flatnonzero(state.active.ravel())


def _z_active(view, state, act):
    B = state.beta.reshape(-1, state.P)[act]
    return view.X @ B.T


def initialize(view: DataView, hyper: HyperParams, rng, state: ModelState | None = None):
    """Starting state: a = 1, unit weights, small random coefficients; latent
    rates drawn from their prior and (y, kappa, t) drawn given the rates."""
    gen = as_generator(rng)
    J, K, P = hyper.J, hyper.K, view.P
    if state is None:
        state = ModelState(
            a=1.0,
            r=np.ones((J, K)),
            beta=0.1 * gen.standard_normal((J, K, P)),
            alpha=np.ones((J, K, P)),
            gamma0=np.ones(J),
            c0=np.ones(J),
        )
    z = np.einsum("ip,jkp->ijk", view.X, state.beta)
    lam = np.asarray(sample_gamma(np.broadcast_to(state.r, z.shape), np.exp(z), gen))
    lam = np.where(state.active, np.maximum(lam, TINY), 0.0)
    aug = AugmentedState(
        t=np.where(view.observed, view.time, 1.0),
        y=np.where(view.known_y, view.event, 1),
        kappa=np.zeros(view.n, dtype=np.int64),
        lam=lam,
    )
    step_subevent_assignment(state, aug, view, gen)
    step_augment_time(state, aug, view, gen)
    return state, aug


def _view(dataset) -> DataView:
    return dataset if isinstance(dataset, DataView) else DataView(dataset)


def step_subevent_assignment(state, aug, dataset, rng):
    """Draw the winning atom; for unknown types draw (y, kappa) jointly."""
    view = _view(dataset)
    gen = as_generator(rng)
    J, K = state.J, state.K
    lam = np.where(state.active, aug.lam, 0.0)
    known = view.known_y
    y = aug.y.copy()
    kappa = aug.kappa.copy()
    if np.any(known):
        rows = np.flatnonzero(known)
        w = lam[rows, view.event[rows] - 1, :]
        try:
            kappa[rows] = sample_categorical_rows(w, gen)
        except DegenerateError as e:
            raise DegenerateError(f"all atom rates vanish for a subject: {e}") from None
        y[rows] = view.event[rows]
    if np.any(~known):
        rows = np.flatnonzero(~known)
        w = lam[rows].reshape(rows.size, J * K)
        flat = sample_categorical_rows(w, gen)
        y[rows] = flat // K + 1
        kappa[rows] = flat % K
    aug.y, aug.kappa = y, kappa


def step_augment_time(state, aug, dataset, rng):
    """Observed times are kept; censored or missing times are drawn from the
    Weibull truncated to (T_ic, inf) with T_ic = 0 when missing."""
    view = _view(dataset)
    t = np.where(view.observed, view.time, aug.t)
    rows = np.flatnonzero(~view.observed)
    if rows.size:
        rate = total_rate(aug.lam[rows], state.active)
        if np.any(~(rate > 0)):
            raise DegenerateError("zero total rate for a censored subject")
        t[rows] = sample_truncated_weibull(state.a, rate, view.lower[rows], np.inf,
                                           as_generator(rng))
    aug.t = t


def step_sample_lambda(state, aug, dataset, rng):
    """lam_ijk ~ Gamma(r_jk + n_ijk, e^z / (1 + t^a e^z)), z = x_i' beta_jk."""
    view = _view(dataset)
    gen = as_generator(rng)
    act = _active_atoms(state)
    n, JK = view.n, state.J * state.K
    z = _z_active(view, state, act)
    psi = state.a * np.log(aug.t)[:, None] + z
    counts = aug.counts.reshape(n, JK)[:, act]
    shape = state.r.ravel()[act] + counts
    scale = np.exp(z - softplus(psi))
    lam = np.zeros((n, JK))
    lam[:, act] = np.maximum(sample_gamma(shape, np.maximum(scale, TINY), gen), TINY)
    aug.lam = lam.reshape(n, state.J, state.K)


def log_conditional_shape(a, log_t, z, weights, a_prior=None):
    """log p(a | ...) up to a constant:

        n log a + (a - 1) sum_i log t_i - sum_{i,jk} w_ijk log(1 + t_i^a e^{z_ijk})

    with w_ijk = n_ijk + r_jk over active atoms.
    """
    if a <= 0:
        return -np.inf
    val = log_t.size * np.log(a) + (a - 1.0) * log_t.sum() \
        - _kernels.weighted_softplus_sum(a, log_t, z, weights)
    if a_prior is not None:
        shape, rate = a_prior
        val += (shape - 1.0) * np.log(a) - rate * a
    return val


def grad_log_conditional_shape(a, log_t, z, weights, a_prior=None):
    from scipy.special import expit

    g = log_t.size / a + log_t.sum() \
        - float((weights * expit(a * log_t[:, None] + z) * log_t[:, None]).sum())
    if a_prior is not None:
        g += (a_prior[0] - 1.0) / a - a_prior[1]
    return g


def _shape_target(state, aug, view, a_prior):
    act = _active_atoms(state)
    z = _z_active(view, state, act)
    weights = aug.counts.reshape(view.n, -1)[:, act] + state.r.ravel()[act]
    log_t = np.log(aug.t)
    return lambda a: log_conditional_shape(a, log_t, z, weights, a_prior)


def step_sample_shape(state, aug, dataset, rng, a_prior=None, width=1.0):
    view = _view(dataset)
    target = _shape_target(state, aug, view, a_prior)
    state.a, _ = slice_sample_unimodal(target, state.a, as_generator(rng), width=width)


def beta_conditional(state, aug, view, omega, act):
    """(h, precision) of the Gaussian conditional of beta for atoms ``act``
    given PG draws ``omega`` (n, len(act)); the mean is precision^-1 h."""
    J, K, P = state.J, state.K, state.P
    log_t = np.log(aug.t)
    counts = aug.counts.reshape(view.n, J * K)[:, act]
    r = state.r.ravel()[act]
    prec = (omega.T @ view.XX).reshape(act.size, P, P)
    prec[:, np.arange(P), np.arange(P)] += state.alpha.reshape(J * K, P)[act]
    resid = state.a * omega * log_t[:, None] + 0.5 * (r - counts)
    return -resid.T @ view.X, prec


def step_sample_beta(state, aug, dataset, rng):
    """Polya-Gamma augmentation, then a Gaussian draw per active atom.

    Inactive atoms carry no data and are refreshed from their prior.
    """
    view = _view(dataset)
    gen = as_generator(rng)
    J, K, P = state.J, state.K, state.P
    act = _active_atoms(state)
    z = _z_active(view, state, act)
    counts = aug.counts.reshape(view.n, J * K)[:, act]
    r = state.r.ravel()[act]
    omega = np.asarray(sample_polya_gamma_approx(r + counts, z + state.a * np.log(aug.t)[:, None],
                                                 gen))
    h, prec = beta_conditional(state, aug, view, omega, act)
    beta = state.beta.reshape(J * K, P).copy()
    beta[act] = sample_mvn_from_precision(h, prec, gen)
    idle = np.setdiff1d(np.arange(J * K), act)
    if idle.size:
        alpha = state.alpha.reshape(J * K, P)
        beta[idle] = gen.standard_normal((idle.size, P)) / np.sqrt(alpha[idle])
    state.beta = beta.reshape(J, K, P)
    full = np.zeros((view.n, J * K))
    full[:, act] = omega
    aug.omega = full.reshape(view.n, J, K)


def step_sample_alpha(state, rng, hyper: HyperParams):
    scale = 1.0 / (hyper.b0 + 0.5 * state.beta**2)
    state.alpha = np.asarray(sample_gamma(hyper.a0 + 0.5, scale, as_generator(rng)))


def step_sample_r_gamma0(state, aug, dataset, rng, hyper: HyperParams):
    """CRT augmentation for the gamma-process weights and concentration.

    gamma0 is drawn with r integrated out, so it is updated before r.
    """
    view = _view(dataset)
    gen = as_generator(rng)
    J, K = state.J, state.K
    act = _active_atoms(state)
    counts = aug.counts.reshape(view.n, J * K)
    n2 = sample_crt(counts, np.broadcast_to(state.r.ravel(), counts.shape), gen)
    L = n2.sum(axis=0).reshape(J, K)
    conc = np.repeat((state.gamma0 / K)[:, None], K, axis=1)
    l = np.asarray(sample_crt(L, conc, gen)).reshape(J, K)

    z = _z_active(view, state, act)
    q = np.zeros(J * K)
    q[act] = softplus(state.a * np.log(aug.t)[:, None] + z).sum(axis=0)
    q = q.reshape(J, K)
    c0 = state.c0[:, None]
    # log(1 - p_jk) with p_jk = q / (c0 + q), without forming 1 - p.
    log1m_p = np.log(c0) - np.log(c0 + q)
    p = q / (c0 + q)
    rate_g = hyper.f0 - log1m_p.sum(axis=1) / K
    gamma0 = np.asarray(sample_gamma(hyper.e0 + l.sum(axis=1), 1.0 / rate_g, gen))
    gamma0 = np.maximum(gamma0, TINY)
    r = np.asarray(sample_gamma(L + (gamma0 / K)[:, None], 1.0 / (c0 + q), gen))
    state.gamma0 = gamma0
    state.r = np.maximum(r, TINY)
    aug.l, aug.p = l, p


def step_sample_c0(state, rng, hyper: HyperParams):
    scale = 1.0 / (hyper.f1 + state.r.sum(axis=1))
    state.c0 = np.maximum(np.asarray(sample_gamma(hyper.e1 + state.gamma0, scale,
                                                  as_generator(rng))), TINY)


def step_prune(state, aug):
    """Deactivate atoms that won no subject in this sweep.

    A deactivated atom gets zero rate in the next sweep's assignment step and
    therefore can never win again: pruning is permanent in effect.
    """
    state.active = state.active & (aug.m > 0)


class GibbsSampler:
    """Owns one chain's state, latent variables and random stream."""

    def __init__(self, dataset: Dataset, hyper: HyperParams, rng, prune: bool = True,
                 state: ModelState | None = None):
        if hyper.J != dataset.J:
            raise ParameterError(f"hyper.J={hyper.J} but data has J={dataset.J}")
        self.view = DataView(dataset)
        self.hyper = hyper
        self.gen = as_generator(rng)
        self.prune = prune
        try:
            self.state, self.aug = initialize(self.view, hyper, self.gen, state)
        except (ParameterError, DegenerateError) as e:
            # invalid sampler inputs here come from overflowing rates
            raise NumericalError(f"initialization: {e}") from e

    @classmethod
    def from_latent(cls, dataset, hyper, rng, state, aug, prune=False):
        """Start from a given joint (parameters, latent variables) draw."""
        self = cls.__new__(cls)
        self.view = DataView(dataset)
        self.hyper = hyper
        self.gen = as_generator(rng)
        self.prune = prune
        self.state, self.aug = state, aug
        return self

    def sweep(self) -> float:
        s, g, v, hp = self.state, self.gen, self.view, self.hyper
        step_sample_lambda(s, self.aug, v, g)
        step_subevent_assignment(s, self.aug, v, g)
        step_augment_time(s, self.aug, v, g)
        ll = log_joint_likelihood(s, self.aug, v.X)
        step_sample_shape(s, self.aug, v, g, hp.a_prior)
        step_sample_beta(s, self.aug, v, g)
        step_sample_alpha(s, g, hp)
        step_sample_r_gamma0(s, self.aug, v, g, hp)
        step_sample_c0(s, g, hp)
        if self.prune:
            step_prune(s, self.aug)
        return ll


def run_chain(config: McmcConfig, hyper: HyperParams, dataset: Dataset, rng,
              trace_path=None, dump_beta: bool = True, progress_every: int = 0) -> PosteriorDraws:
    """Run one chain and keep every ``thin``-th post-burn-in state.

    With ``trace_path`` set, one JSON record per retained sweep is appended
    (newline-delimited).
    """
    if hyper.K != config.K:
        hyper = HyperParams(**{**hyper.__dict__, "K": config.K})
    started = _time.perf_counter()
    sampler = GibbsSampler(dataset, hyper, rng, prune=config.prune)
    J, K = hyper.J, hyper.K
    T = config.n_iterations
    draws = PosteriorDraws(n_burnin=config.n_burnin)
    draws.a_trace = np.empty(T)
    draws.r_sum_trace = np.empty((T, J))
    draws.active_trace = np.empty((T, J), dtype=np.int64)
    draws.occupied_trace = np.empty((T, J), dtype=np.int64)
    draws.log_joint_trace = np.empty(T)
    occ = np.zeros((J, K))
    fh = open(trace_path, "w") if trace_path is not None else None
    try:
        for it in range(T):
            try:
                ll = sampler.sweep()
            except (NumericalError, DegenerateError, ParameterError) as e:
                raise NumericalError(f"sweep {it}: {e}") from e
            s = sampler.state
            if not np.isfinite(ll):
                raise NumericalError(f"sweep {it}: non-finite log joint")
            m = sampler.aug.m
            draws.a_trace[it] = s.a
            draws.r_sum_trace[it] = np.where(s.active, s.r, 0).sum(axis=1)
            draws.active_trace[it] = s.active.sum(axis=1)
            draws.occupied_trace[it] = (m > 0).sum(axis=1)
            draws.log_joint_trace[it] = ll
            if it >= config.n_burnin:
                occ += m > 0
                if (it - config.n_burnin) % config.thin == 0:
                    snap = s.copy()
                    draws.states.append(snap)
                    draws.iterations.append(it)
                    if fh is not None:
                        rec = {"iteration": it, "a": snap.a, "r": snap.r.tolist(),
                               "active": snap.active.tolist(), "log_joint": ll}
                        if dump_beta:
                            rec.update(beta=snap.beta.tolist(), alpha=snap.alpha.tolist(),
                                       gamma0=snap.gamma0.tolist(), c0=snap.c0.tolist())
                        fh.write(json.dumps(rec) + "\n")
            if progress_every and (it + 1) % progress_every == 0:
                log.info("sweep %d/%d a=%.4f active=%s", it + 1, T, s.a,
                         s.active.sum(axis=1).tolist())
    finally:
        if fh is not None:
            fh.close()
    n_post = T - config.n_burnin
    draws.occupancy = occ / n_post if n_post > 0 else None
    draws.seconds = _time.perf_counter() - started
    return draws


def read_trace(path) -> PosteriorDraws:
    """Load retained states from a trace file written with ``dump_beta``."""
    draws = PosteriorDraws()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "beta" not in rec:
                raise ValueError(f"{path}: trace lacks coefficients (written without dump_beta)")
            draws.states.append(ModelState.from_dict(rec))
            draws.iterations.append(int(rec["iteration"]))
    return draws
