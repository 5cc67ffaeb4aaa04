"""Univariate slice sampling on the positive half-line."""
from __future__ import annotations

import math

from .errors import NumericalError
from .rng import as_generator


def slice_sample_unimodal(log_density, x0, rng, width=1.0, log_f0=None):
    """One stepping-out / shrinkage slice-sampling transition.

    The target is assumed unimodal on (0, inf); stepping out is then
    unbounded without breaking reversibility.  ``log_density`` may return
    -inf outside the support and is never called at x <= 0.

    Returns ``(x_new, log_density(x_new))``.
    """
    gen = as_generator(rng)

    def logp(x):
        if x <= 0.0:
            return -math.inf
        v = float(log_density(x))
        if math.isnan(v):
            raise NumericalError(f"log density is NaN at {x!r}")
        return v

    if log_f0 is None:
        log_f0 = logp(x0)
    if not math.isfinite(log_f0):
        raise NumericalError(f"log density not finite at the start point {x0!r}")

    level = log_f0 + math.log(gen.random())
    left = x0 - width * gen.random()
    right = left + width
    while left > 0.0 and logp(left) > level:
        left -= width
    while logp(right) > level:
        right += width
    left = max(left, 0.0)

    while True:
        x1 = left + (right - left) * gen.random()
        lp1 = logp(x1)
        if lp1 > level:
            return x1, lp1
        if x1 < x0:
            left = x1
        else:
            right = x1
        if right - left < 1e-14 * max(1.0, abs(x0)):
            # Interval collapsed on x0 (only possible through rounding).
            return x0, log_f0
