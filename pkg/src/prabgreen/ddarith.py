"""Vectorized double-double (compensated pair) arithmetic.

A value is held as (hi, lo) float64 arrays with hi + lo exact to ~1e-32
relative.  Used by the kernel engine's cancellation fallback: term factors
are assembled in dd, and the final sum over all hi and lo parts goes
through math.fsum, which is exact, so the result's relative error is
roughly 1e-32 times the sum's condition number.

Error-free transformations follow Dekker/Knuth; no fma is assumed.
"""

from __future__ import annotations

import math

import numpy as np

_SPLITTER = 134217729.0  # 2^27 + 1


def two_sum(a, b):
    """Exact a + b = s + e (Knuth)."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def quick_two_sum(a, b):
    """Exact a + b = s + e assuming |a| >= |b|."""
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a):
    c = _SPLITTER * a
    ah = c - (c - a)
    return ah, a - ah


def two_prod(a, b):
    """Exact a * b = p + e (Dekker)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def dd_add(xh, xl, yh, yl):
    sh, se = two_sum(xh, yh)
    te = xl + yl + se
    return quick_two_sum(sh, te)


def dd_mul(xh, xl, yh, yl):
    ph, pe = two_prod(xh, yh)
    pe = pe + (xh * yl + xl * yh)
    return quick_two_sum(ph, pe)


def dd_div(xh, xl, yh, yl):
    q1 = xh / yh
    rh, rl = dd_mul(np.asarray(q1, dtype=float), np.zeros_like(np.asarray(q1, dtype=float)), yh, yl)
    # remainder x - q1*y in dd
    dh, dl = dd_add(xh, xl, -rh, -rl)
    q2 = (dh + dl) / yh
    return quick_two_sum(q1, q2)


def dd_from_float(a):
    a = np.asarray(a, dtype=float)
    return a, np.zeros_like(a)


def dd_from_mpfr(value) -> tuple[float, float]:
    """Round an mpmath/gmpy2 value to a (hi, lo) double pair."""
    hi = float(value)
    lo = float(value - hi)
    return hi, lo


def dd_neg(xh, xl):
    return -xh, -xl


def dd_scale(xh, xl, s: float):
    """Multiply by an exact double scalar (e.g. a sign or power of two)."""
    ph, pe = two_prod(xh, np.full_like(xh, s) if np.ndim(xh) else s)
    pe = pe + xl * s
    return quick_two_sum(ph, pe)


def dd_fsum(hs, ls) -> float:
    """Exact double sum of all dd parts, correctly rounded to a float."""
    parts = np.concatenate([np.atleast_1d(hs).ravel(),
                            np.atleast_1d(ls).ravel()])
    parts = parts[np.isfinite(parts) & (parts != 0.0)]
    return math.fsum(parts.tolist())
