"""Synthetic competing-risks data: the two benchmark scenarios and arbitrary
Weibull-racing variants for property tests."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset, TimeKind, train_test_split
from .distributions import weibull_ppf
from .errors import ParameterError
from .rng import as_generator

RATE_MAPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": np.exp,
    "cosh": np.cosh,
    "abs_sinh": lambda z: np.abs(np.sinh(z)),
}

# Not published for the benchmark; fixed here so runs are reproducible.
DEFAULT_BETA = ((1.0, -1.0, 0.5), (-0.5, 1.0, -1.0))

EVAL_GRIDS = {
    1: (0.4, 0.8, 1.2, 1.6, 2.0),
    2: (0.4, 0.6, 0.8, 1.0, 1.2),
}


@dataclass
class ScenarioSpec:
    rate_maps: tuple[str, ...] = ("exp", "exp")
    a: float = 2.0
    beta: tuple[tuple[float, ...], ...] = DEFAULT_BETA
    censor_time: float = 2.1
    n: int = 2000
    name: str = "custom"
    eval_times: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.censor_time > 0:
            raise ParameterError("censoring time must be positive")
        if len(self.rate_maps) != len(self.beta):
            raise ParameterError("need one coefficient vector per risk")
        for m in self.rate_maps:
            if m not in RATE_MAPS:
                raise ParameterError(f"unknown rate map {m!r}; choose from {sorted(RATE_MAPS)}")
        if len({len(b) for b in self.beta}) != 1:
            raise ParameterError("coefficient vectors must share a dimension")

    @property
    def J(self) -> int:
        return len(self.rate_maps)

    @property
    def dim(self) -> int:
        return len(self.beta[0])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d) -> "ScenarioSpec":
        d = dict(d)
        d["rate_maps"] = tuple(d["rate_maps"])
        d["beta"] = tuple(tuple(b) for b in d["beta"])
        d["eval_times"] = tuple(d.get("eval_times", ()))
        return cls(**d)


def scenario(number: int, n: int = 2000, beta=DEFAULT_BETA) -> ScenarioSpec:
    if number == 1:
        return ScenarioSpec(("exp", "exp"), 2.0, beta, 2.1, n, "scenario1", EVAL_GRIDS[1])
    if number == 2:
        return ScenarioSpec(("cosh", "abs_sinh"), 2.0, beta, 1.3, n, "scenario2", EVAL_GRIDS[2])
    raise ParameterError(f"unknown scenario {number}")


@dataclass
class GroundTruth:
    latent_times: np.ndarray  # (n, J)
    true_event: np.ndarray  # 1-based argmin before censoring
    rates: np.ndarray  # (n, J)


def generate(spec: ScenarioSpec, rng) -> tuple[Dataset, GroundTruth]:
    gen = as_generator(rng)
    X = gen.random((spec.n, spec.dim))
    beta = np.asarray(spec.beta, dtype=float)
    z = X @ beta.T
    rates = np.column_stack([RATE_MAPS[m](z[:, j]) for j, m in enumerate(spec.rate_maps)])
    u = gen.random(rates.shape)
    with np.errstate(divide="ignore"):
        latent = weibull_ppf(u, spec.a, rates)  # rate 0 gives t = inf
    first = latent.argmin(axis=1)
    t_min = latent[np.arange(spec.n), first]
    censored = t_min >= spec.censor_time
    time = np.where(censored, spec.censor_time, t_min)
    kind = np.where(censored, TimeKind.CENSORED, TimeKind.OBSERVED)
    event = np.where(censored, 0, first + 1)
    names = [f"x{g + 1}" for g in range(spec.dim)]
    data = Dataset.from_covariates(X, time, kind, event, spec.J, names)
    return data, GroundTruth(latent, first + 1, rates)


def replicate_paper_protocol(spec: ScenarioSpec, n_partitions: int, rng,
                             n_test: int = 200):
    """One dataset, ``n_partitions`` random train/test splits with an
    uncensored test set of ``n_test`` rows each."""
    gen = as_generator(rng)
    data, truth = generate(spec, gen)
    splits = [train_test_split(data, n_test, gen, exclude_censored_from_test=True)
              for _ in range(n_partitions)]
    return data, truth, splits


LOAN_GRADES = ("AA", "A", "B", "C", "D", "E", "HR", "NA")
LOAN_TERMS = ("12", "36", "60")
LOAN_CATEGORICAL = {"grade": "NA", "term": "36"}


def loan_surrogate(n: int, rng, missing_time_frac: float = 0.01):
    """Loan-book-like competing risks: event 1 = default, event 2 = early
    repayment, censored at a per-loan end of follow-up.

    Returns (header, rows) with string cells, ready for ``csv.writer``;
    ``grade`` and ``term`` are categorical (baselines in LOAN_CATEGORICAL).
    """
    gen = as_generator(rng)
    grade = gen.choice(len(LOAN_GRADES), size=n, p=[0.05, 0.15, 0.2, 0.2, 0.15, 0.1, 0.1, 0.05])
    term = gen.choice(3, size=n, p=[0.1, 0.7, 0.2])
    verified = gen.integers(0, 2, n)
    dti = gen.uniform(0.0, 0.6, n)
    log_amount = gen.normal(9.0, 0.6, n)
    risk = np.array([-1.5, -1.0, -0.5, 0.0, 0.4, 0.8, 1.2, 0.6])[grade]
    z_def = -2.0 + risk + 2.0 * dti - 0.3 * verified + 0.3 * (term == 2)
    # early repayment races a "refinance" and a "windfall" route
    z_pay = np.logaddexp(-1.0 - 0.8 * risk + 0.2 * (log_amount - 9.0),
                         -2.0 + 1.5 * (term == 0) - 2.0 * dti)
    rates = np.column_stack([np.exp(z_def), np.exp(z_pay)])
    latent = weibull_ppf(gen.random((n, 2)), 1.5, rates)
    first = latent.argmin(axis=1)
    t = latent[np.arange(n), first]
    follow_up = gen.uniform(0.5, 3.0, n)
    censored = t >= follow_up
    no_time = (gen.random(n) < missing_time_frac) & ~censored
    header = ["time", "status", "grade", "term", "verified", "dti", "log_amount"]
    rows = []
    for i in range(n):
        time = "" if no_time[i] else repr(float(follow_up[i] if censored[i] else t[i]))
        status = "0" if censored[i] else str(first[i] + 1)
        rows.append([time, status, LOAN_GRADES[grade[i]], LOAN_TERMS[term[i]], str(verified[i]),
                     repr(float(dti[i])), repr(float(log_amount[i]))])
    return header, rows


def write_loan_surrogate(path, n: int, rng, missing_time_frac: float = 0.01) -> None:
    header, rows = loan_surrogate(n, rng, missing_time_frac)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
