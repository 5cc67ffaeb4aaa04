"""Compiled inner loops for the sampler's hottest elementwise work."""
from __future__ import annotations

import math

import numba
import numpy as np

PI2 = math.pi**2


@numba.njit(cache=True, inline="always")
def _gamma1(gen, shape):
    # Gamma(shape, 1); boosted for shape < 1 (underflow to 0 is acceptable here).
    if shape < 1.0:
        g = gen.standard_gamma(shape + 1.0)
        return g * math.exp(math.log(gen.random()) / shape)
    return gen.standard_gamma(shape)


@numba.njit(cache=True)
def _series_sums(c):
    c = abs(c)
    if c < 0.05:
        c2 = c * c
        s1 = 0.5 - c2 / 24.0 + c2 * c2 / 240.0
        f2 = 1.0 / 6.0 - c2 / 30.0 + 17.0 * c2 * c2 / 3360.0
    else:
        half = 0.5 * c
        th = math.tanh(half)
        e = math.exp(-half)
        sech = 2.0 * e / (1.0 + e * e)
        s1 = th / c
        f2 = (2.0 * th - c * sech * sech) / (c * c * c)
    return PI2 * s1, PI2 * PI2 * f2


@numba.njit(cache=True)
def pg_approx(b, c, gen, n_exact):
    """Flat arrays b, c -> PG draws (exact head terms + moment-matched tail)."""
    out = np.empty(b.size)
    for i in range(b.size):
        bi = b[i]
        ci = c[i]
        cc = ci * ci / (4.0 * PI2)
        head = 0.0
        p1 = 0.0
        p2 = 0.0
        for k in range(1, n_exact + 1):
            d = (k - 0.5) ** 2 + cc
            head += _gamma1(gen, bi) / d
            p1 += 1.0 / d
            p2 += 1.0 / (d * d)
        s1, s2 = _series_sums(ci)
        t1 = max(s1 - p1, 1e-300)
        t2 = max(s2 - p2, 1e-300)
        tail = _gamma1(gen, bi * t1 * t1 / t2) * t2 / (2.0 * PI2 * t1)
        out[i] = head / (2.0 * PI2) + tail
    return out


@numba.njit(cache=True)
def weighted_softplus_sum(a, log_t, z, w):
    """sum_{i,c} w[i, c] * log(1 + exp(a * log_t[i] + z[i, c]))."""
    total = 0.0
    n, m = z.shape
    for i in range(n):
        al = a * log_t[i]
        for c in range(m):
            x = al + z[i, c]
            if x > 0:
                sp = x + math.log1p(math.exp(-x))
            else:
                sp = math.log1p(math.exp(x))
            total += w[i, c] * sp
    return total
