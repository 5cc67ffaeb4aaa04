"""Right-censored competing-risks data with optional missing time or type.

A :class:`Dataset` stores columns as arrays; :class:`Observation` objects are
materialized on demand for code that prefers a per-subject view.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ParameterError, ParseError
from .rng import as_generator


class TimeKind(IntEnum):
    OBSERVED = 0
    CENSORED = 1
    MISSING = 2


@dataclass(frozen=True)
class Observed:
    t: float


@dataclass(frozen=True)
class RightCensored:
    T: float


@dataclass(frozen=True)
class Missing:
    pass


@dataclass(frozen=True)
class Known:
    j: int


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    time: Observed | RightCensored | Missing
    event: Known | Missing

    @property
    def both_missing(self) -> bool:
        return isinstance(self.time, Missing) and isinstance(self.event, Missing)


@dataclass
class Dataset:
    """Arrays for n subjects.

    ``X`` already contains the intercept column when ``includes_intercept``
    is set.  ``time`` holds the event or censoring time (0 when missing),
    ``event`` holds 1..J for a known type and 0 when the type is unknown
    (which includes every right-censored row).
    """

    X: np.ndarray
    time: np.ndarray
    time_kind: np.ndarray
    event: np.ndarray
    J: int
    feature_names: list[str] = field(default_factory=list)
    includes_intercept: bool = True

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.time = np.asarray(self.time, dtype=float)
        self.time_kind = np.asarray(self.time_kind, dtype=np.int8)
        self.event = np.asarray(self.event, dtype=np.int64)
        n = self.X.shape[0]
        if not (self.time.shape == self.time_kind.shape == self.event.shape == (n,)):
            raise ParameterError("X, time, time_kind and event must have matching rows")
        if self.J < 1:
            raise ParameterError("J must be at least 1")
        if np.any((self.event < 0) | (self.event > self.J)):
            raise ParameterError(f"event types must lie in 0..{self.J}")
        timed = self.time_kind != TimeKind.MISSING
        if np.any(~(self.time[timed] > 0)) or np.any(~np.isfinite(self.time[timed])):
            raise ParameterError("observed and censoring times must be positive and finite")
        self.time = np.where(timed, self.time, 0.0)
        if np.any((self.time_kind == TimeKind.CENSORED) & (self.event != 0)):
            raise ParameterError("right-censored rows cannot carry a known event type")
        if not np.all(np.isfinite(self.X)):
            raise ParameterError("covariates must be finite (missing covariates are not supported)")
        if not self.feature_names:
            self.feature_names = [f"x{g}" for g in range(self.n_raw_features)]
        self.X.setflags(write=False)

    @classmethod
    def from_covariates(cls, X_raw, time, time_kind, event, J, feature_names=None,
                        includes_intercept=True):
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        if X_raw.shape[1] == 0 and X_raw.shape[0] != len(np.atleast_1d(time)):
            X_raw = np.zeros((len(time), 0))
        X = np.hstack([np.ones((X_raw.shape[0], 1)), X_raw]) if includes_intercept else X_raw
        return cls(X, time, time_kind, event, J, list(feature_names or []), includes_intercept)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def P(self) -> int:
        return self.X.shape[1]

    @property
    def n_raw_features(self) -> int:
        return self.P - int(self.includes_intercept)

    @property
    def X_raw(self) -> np.ndarray:
        return self.X[:, 1:] if self.includes_intercept else self.X

    @property
    def column_names(self) -> list[str]:
        return (["intercept"] if self.includes_intercept else []) + list(self.feature_names)

    @property
    def both_missing(self) -> np.ndarray:
        return (self.time_kind == TimeKind.MISSING) & (self.event == 0)

    @property
    def uncensored(self) -> np.ndarray:
        return (self.time_kind == TimeKind.OBSERVED) & (self.event > 0)

    def observation(self, i: int) -> Observation:
        kind = self.time_kind[i]
        if kind == TimeKind.OBSERVED:
            tstat = Observed(float(self.time[i]))
        elif kind == TimeKind.CENSORED:
            tstat = RightCensored(float(self.time[i]))
        else:
            tstat = Missing()
        estat = Known(int(self.event[i])) if self.event[i] > 0 else Missing()
        return Observation(self.X[i].copy(), tstat, estat)

    @property
    def observations(self) -> list[Observation]:
        return [self.observation(i) for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.time[idx], self.time_kind[idx], self.event[idx],
                       self.J, list(self.feature_names), self.includes_intercept)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.J == other.J
            and self.includes_intercept == other.includes_intercept
            and list(self.feature_names) == list(other.feature_names)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.time_kind, other.time_kind)
            and np.array_equal(self.event, other.event)
        )


@dataclass
class CsvSchema:
    """How to read a CSV file.

    ``J`` may be left as None to use the largest status value found.
    ``categorical`` maps a column name to its baseline level; such columns are
    dummy-encoded with the baseline dropped.
    """

    J: int | None = None
    time_col: str = "time"
    status_col: str = "status"
    includes_intercept: bool = True
    categorical: dict[str, str] = field(default_factory=dict)


def one_hot_encode(column: Sequence, baseline) -> tuple[np.ndarray, list]:
    """Dummy columns for every level except ``baseline`` (sorted level order)."""
    values = [str(v) for v in column]
    baseline = str(baseline)
    if baseline not in values:
        raise ParameterError(f"baseline level {baseline!r} does not occur in the column")
    levels = sorted(set(values) - {baseline})
    out = np.zeros((len(values), len(levels)))
    pos = {lev: g for g, lev in enumerate(levels)}
    for i, v in enumerate(values):
        if v != baseline:
            out[i, pos[v]] = 1.0
    return out, levels


def _parse_float(cell, what, row):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric {what} {cell!r}", row) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite {what} {cell!r}", row)
    return v


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Read the ``time,status,<covariates...>`` format.

    Row numbers in error messages count the header as row 1.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]

    for col in (schema.time_col, schema.status_col):
        if col not in header:
            raise ParseError(f"missing required column {col!r}", 1)
    ti, si = header.index(schema.time_col), header.index(schema.status_col)
    cov_cols = [g for g in range(len(header)) if g not in (ti, si)]
    for name in schema.categorical:
        if name not in header:
            raise ParseError(f"categorical column {name!r} not in header", 1)

    n = len(rows)
    time = np.zeros(n)
    kind = np.zeros(n, dtype=np.int8)
    event = np.zeros(n, dtype=np.int64)
    status_raw = []
    for i, r in enumerate(rows):
        rowno = i + 2
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(r)}", rowno)
        tcell, scell = r[ti].strip(), r[si].strip()
        status = None
        if scell:
            s = _parse_float(scell, "status", rowno)
            if s != int(s) or s < 0:
                raise ParseError(f"status must be a nonnegative integer, got {scell!r}", rowno)
            status = int(s)
        status_raw.append(status)
        if tcell:
            t = _parse_float(tcell, "time", rowno)
            if t <= 0:
                raise ParseError(f"time must be positive, got {tcell!r}", rowno)
            time[i] = t
            kind[i] = TimeKind.CENSORED if status == 0 else TimeKind.OBSERVED
            event[i] = status or 0
        else:
            kind[i] = TimeKind.MISSING
            event[i] = status or 0

    J = schema.J if schema.J is not None else max([s for s in status_raw if s] or [1])
    for i, s in enumerate(status_raw):
        if s is not None and s > J:
            raise ParseError(f"status {s} outside 0..{J}", i + 2)

    blocks, names = [], []
    for g in cov_cols:
        name = header[g]
        cells = [r[g].strip() for r in rows]
        if name in schema.categorical:
            dummies, levels = one_hot_encode(cells, schema.categorical[name])
            blocks.append(dummies)
            names.extend(f"{name}={lev}" for lev in levels)
            continue
        col = np.empty(n)
        for i, c in enumerate(cells):
            if not c:
                raise ParseError(f"missing covariate {name!r}", i + 2)
            col[i] = _parse_float(c, f"covariate {name!r}", i + 2)
        blocks.append(col[:, None])
        names.append(name)
    X_raw = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Dataset.from_covariates(X_raw, time, kind, event, J, names,
                                   schema.includes_intercept)


def write_csv(dataset: Dataset, path) -> None:
    """Write in the format read by :func:`load_csv` (covariates without intercept)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status", *dataset.feature_names])
        for i in range(dataset.n):
            kind = dataset.time_kind[i]
            tcell = "" if kind == TimeKind.MISSING else repr(float(dataset.time[i]))
            if kind == TimeKind.CENSORED:
                scell = "0"
            elif dataset.event[i] > 0:
                scell = str(int(dataset.event[i]))
            else:
                # Both-missing rows are written with status 0 and no time.
                scell = "" if kind == TimeKind.OBSERVED else "0"
            w.writerow([tcell, scell, *(repr(float(v)) for v in dataset.X_raw[i])])


def train_test_split(dataset: Dataset, n_test: int, rng,
                     exclude_censored_from_test: bool = False) -> tuple[Dataset, Dataset]:
    """Random partition; with the flag set the test rows are all uncensored
    (observed time and known type)."""
    if not 0 < n_test < dataset.n:
        raise ParameterError(f"n_test must be in (0, {dataset.n}), got {n_test}")
    gen = as_generator(rng)
    eligible = np.flatnonzero(dataset.uncensored) if exclude_censored_from_test \
        else np.arange(dataset.n)
    if eligible.size < n_test:
        raise ParameterError(
            f"only {eligible.size} eligible rows for a test set of {n_test}")
    test_idx = np.sort(gen.choice(eligible, size=n_test, replace=False))
    mask = np.ones(dataset.n, dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)
