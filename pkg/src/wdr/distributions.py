"""Sampling primitives used by the Gibbs sampler, the MAP estimator and the
data generators.

Gamma distributions are parameterized by (shape, scale) everywhere, so the
mean is ``shape * scale``.  Every function accepts an ``RngStream`` or a
numpy ``Generator``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import DegenerateError, IntervalError, NumericalError, ParameterError
from .rng import as_generator

PI2 = np.pi**2
PG_EXACT_TERMS = 5


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0):
        raise ParameterError(f"{name} must be positive, got {value!r}")
    return arr


def weibull_ppf(u, a, lam):
    """Inverse CDF of Weibull(a, lam) where F(t) = 1 - exp(-lam t^a)."""
    u = np.asarray(u, dtype=float)
    return (-np.log1p(-u) / lam) ** (1.0 / a)


def sample_weibull(a, lam, rng, size=None):
    a = _positive("a", a)
    lam = _positive("lambda", lam)
    gen = as_generator(rng)
    if size is None:
        size = np.broadcast(a, lam).shape
    u = gen.random(size)
    out = weibull_ppf(u, a, lam)
    return out if np.ndim(out) else float(out)


def sample_truncated_weibull(a, lam, lower, upper, rng, size=None):
    """Weibull(a, lam) restricted to (lower, upper).

    Works on the cumulative-hazard scale H = lam t^a: the conditioned draw is
    H_low plus an Exp(1) draw truncated to (0, H_up - H_low), so only
    differences of H are exponentiated and large ``lower`` cannot underflow.
    """
    a = _positive("a", a)
    lam = _positive("lambda", lam)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower < 0) or np.any(lower >= upper):
        raise IntervalError(f"need 0 <= lower < upper, got ({lower}, {upper})")
    gen = as_generator(rng)
    if size is None:
        size = np.broadcast(a, lam, lower, upper).shape
    u = gen.random(size)
    h_low = lam * lower**a
    width = lam * upper**a - h_low
    # Exp(1) truncated to (0, width); width = inf gives a plain exponential.
    excess = -np.log1p(u * np.expm1(-width))
    excess = np.maximum(excess, np.finfo(float).tiny)
    out = ((h_low + excess) / lam) ** (1.0 / a)
    # Rounding can land exactly on the bound when lower is huge.
    out = np.where(out > lower, out, np.nextafter(lower, np.inf))
    return out if np.ndim(out) else float(out)


def sample_log_gamma(shape, rng, size=None):
    """log of a Gamma(shape, 1) draw, accurate for tiny shapes.

    Uses Gamma(s) = Gamma(s + 1) * U^(1/s) for s < 1, kept in log space so
    draws far below the smallest double are still represented.
    """
    shape = _positive("shape", shape)
    gen = as_generator(rng)
    if size is None:
        size = shape.shape
    shape = np.broadcast_to(shape, size)
    small = shape < 1.0
    g = gen.standard_gamma(np.where(small, shape + 1.0, shape), size=size)
    out = np.log(g)
    if np.any(small):
        u = gen.random(size)
        with np.errstate(divide="ignore", over="ignore"):
            # Shapes near zero send the draw to -inf, the correct limit.
            out = np.where(small, out + np.log(u) / shape, out)
    return out


def sample_gamma(shape, scale, rng, size=None):
    shape = _positive("shape", shape)
    scale = _positive("scale", scale)
    if size is None:
        size = np.broadcast(shape, scale).shape
    gen = as_generator(rng)
    shape_b = np.broadcast_to(shape, size)
    if np.all(shape_b >= 1.0):
        out = gen.standard_gamma(shape_b, size=size) * scale
    else:
        out = np.exp(sample_log_gamma(shape_b, gen, size)) * scale
    return out if np.ndim(out) else float(out)


def sample_categorical(log_weights, rng) -> int:
    lw = np.asarray(log_weights, dtype=float).ravel()
    if lw.size == 0 or not np.any(np.isfinite(lw)):
        raise DegenerateError("all categorical weights are zero")
    if lw.size == 1:
        return 0
    p = np.exp(lw - logsumexp(lw))
    u = as_generator(rng).random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, lw.size - 1)


def sample_categorical_rows(weights, rng):
    """One categorical draw per row of a nonnegative weight matrix."""
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w, axis=1)
    total = cum[:, -1]
    if np.any(~(total > 0)):
        bad = int(np.flatnonzero(~(total > 0))[0])
        raise DegenerateError(f"row {bad} has no positive weight")
    u = as_generator(rng).random(w.shape[0]) * total
    idx = (cum <= u[:, None]).sum(axis=1)
    # Guard against landing on a trailing zero-weight column by rounding.
    idx = np.minimum(idx, w.shape[1] - 1)
    return idx


def sample_crt(n, r, rng):
    """Chinese restaurant table count: sum_{i<n} Bernoulli(r / (r + i))."""
    n_arr = np.asarray(n)
    r_arr = _positive("r", r)
    if np.any(n_arr < 0):
        raise ParameterError("CRT customer count must be nonnegative")
    n_b, r_b = np.broadcast_arrays(n_arr.astype(np.int64), r_arr)
    flat_n, flat_r = n_b.ravel(), r_b.ravel()
    # One Bernoulli per customer: customer i of cell e sits at a new table
    # with probability r_e / (r_e + i).
    owner = np.repeat(np.arange(flat_n.size), flat_n)
    seat = np.arange(owner.size) - np.repeat(np.cumsum(flat_n) - flat_n, flat_n)
    r_rep = flat_r[owner]
    new_table = as_generator(rng).random(owner.size) < r_rep / (r_rep + seat)
    out = np.bincount(owner, weights=new_table, minlength=flat_n.size).astype(np.int64)
    out = out.reshape(n_b.shape)
    return out if out.ndim else int(out)


def _pg_series_sums(c):
    """Closed forms of sum_k 1/d_k and sum_k 1/d_k^2 with
    d_k = (k - 1/2)^2 + c^2 / (4 pi^2), k = 1, 2, ..."""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 0.05
    cs = np.where(small, 1.0, c)
    half = cs / 2.0
    sech = 2.0 * np.exp(-half) / (1.0 + np.exp(-cs))
    s1 = PI2 * np.where(small, 0.5 - c**2 / 24.0 + c**4 / 240.0, np.tanh(half) / cs)
    f2 = (2.0 * np.tanh(half) - cs * sech**2) / cs**3
    f2 = np.where(small, 1.0 / 6.0 - c**2 / 30.0 + 17.0 * c**4 / 3360.0, f2)
    s2 = PI2**2 * f2
    return s1, s2


def polya_gamma_moments(b, c):
    """Exact mean and variance of PG(b, c)."""
    s1, s2 = _pg_series_sums(c)
    b = np.asarray(b, dtype=float)
    return b * s1 / (2.0 * PI2), b * s2 / (4.0 * PI2**2)


def sample_polya_gamma_approx(b, c, rng, n_exact=PG_EXACT_TERMS):
    """Approximate PG(b, c) draws.

    PG(b, c) = 1/(2 pi^2) sum_k g_k / d_k with g_k ~ Gamma(b, 1) and
    d_k = (k - 1/2)^2 + c^2/(4 pi^2).  The first ``n_exact`` terms are drawn
    exactly; the remaining tail is replaced by a single gamma variable whose
    mean and variance equal those of the tail, so the first two moments of
    the output are exact.
    """
    b = _positive("b", b)
    c = np.asarray(c, dtype=float)
    b, c = np.broadcast_arrays(b, c)
    out = _kernels.pg_approx(np.ascontiguousarray(b).ravel(),
                             np.ascontiguousarray(c).ravel(),
                             as_generator(rng), int(n_exact)).reshape(b.shape)
    return out if out.ndim else float(out)


def sample_mvn_from_precision(h, P, rng):
    """Draw from N(P^{-1} h, P^{-1}) using the Cholesky factor of P.

    ``h`` and ``P`` may carry leading batch dimensions, shapes (..., d) and
    (..., d, d).
    """
    h = np.asarray(h, dtype=float)
    P = np.asarray(P, dtype=float)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"precision matrix is not positive definite "
            f"(smallest pivot {_smallest_pivot(P):.3g})"
        ) from None
    z = as_generator(rng).standard_normal(h.shape)
    # P = L L', mean solves L L' mu = h, noise solves L' e = z.
    w = np.linalg.solve(L, h[..., None])
    out = np.linalg.solve(np.swapaxes(L, -1, -2), w + z[..., None])[..., 0]
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite draw from the normal conditional")
    return out


def _smallest_pivot(P):
    mats = P.reshape((-1,) + P.shape[-2:])
    worst = np.inf
    for A in mats:
        A = A.copy()
        d = A.shape[0]
        for j in range(d):
            piv = A[j, j] - A[j, :j] @ A[j, :j]
            worst = min(worst, piv)
            if piv <= 0:
                break
            A[j, j] = np.sqrt(piv)
            A[j + 1 :, j] = (A[j + 1 :, j] - A[j + 1 :, :j] @ A[j, :j]) / A[j, j]
    return worst
