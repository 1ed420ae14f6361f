"""Scalar special functions: reciprocal gamma, Pochhammer symbols, the
three-parameter (Prabhakar) Mittag-Leffler function, the two-variable
double series E12, and a Wright-type function used by reduction checks.

All series divide by gamma through ``rgamma`` so that terms sitting on a
gamma pole contribute exactly zero.  Alternating series are accumulated
with error-free compensated summation (``math.fsum``) after scaling by the
largest term; when the condition estimate sum|t|/|sum t| exceeds
``COND_FALLBACK`` the sum is redone in extended precision with mpmath
(disable by setting the environment variable PRABGREEN_PRECISION=standard).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import special as sc

from .errors import DivergentParameters, InvalidTerm, NonConvergence

__all__ = [
    "SeriesControl",
    "DEFAULT_CTRL",
    "E12Params",
    "rgamma",
    "pochhammer",
    "prabhakar_e",
    "e12",
    "wright_e",
]

_POLE_TOL = 1e-12
COND_FALLBACK = 1e6
_LN_OVERFLOW = 700.0


def extended_enabled() -> bool:
    """Whether the extended-precision cancellation fallback is active."""
    return os.environ.get("PRABGREEN_PRECISION", "extended") != "standard"


@dataclass(frozen=True)
class SeriesControl:
    """Truncation policy for every infinite series and image sum.

    abs_tol/rel_tol: a term is negligible once |term| falls below
    max(abs_tol, rel_tol*|partial sum|); the series stops after
    ``tail_run`` consecutive negligible terms (or frontier layers).
    ``max_terms`` caps each series index, ``max_images`` is the
    half-width N of image sums over n in [-N, N].
    """

    abs_tol: float = 1e-15
    rel_tol: float = 1e-14
    max_terms: int = 600
    tail_run: int = 4
    max_images: int = 8

    def __post_init__(self) -> None:
        if not (self.abs_tol > 0 and math.isfinite(self.abs_tol)):
            raise ValueError("abs_tol must be positive and finite")
        if not (self.rel_tol > 0 and math.isfinite(self.rel_tol)):
            raise ValueError("rel_tol must be positive and finite")
        if self.max_terms < 1:
            raise ValueError("max_terms must be >= 1")
        if self.tail_run < 1:
            raise ValueError("tail_run must be >= 1")
        if self.max_images < 1:
            raise ValueError("max_images must be >= 1")

    def cutoff(self, running: float) -> float:
        return max(self.abs_tol, self.rel_tol * abs(running))


DEFAULT_CTRL = SeriesControl()


# --------------------------------------------------------------------------
# gamma helpers
# --------------------------------------------------------------------------

def nonpos_int_order(x: float) -> int | None:
    """If x is numerically a non-positive integer -j, return j >= 0, else None."""
    j = round(x)
    if j <= 0 and abs(x - j) <= _POLE_TOL * (1.0 + abs(x)):
        return -int(j)
    return None


def rgamma(x: float) -> float:
    """1/Gamma(x); exactly 0 at the poles x = 0, -1, -2, ..."""
    if not math.isfinite(x):
        raise ValueError(f"rgamma expects a finite argument, got {x}")
    if nonpos_int_order(x) is not None:
        return 0.0
    return float(sc.rgamma(x))


def lngamma_abs(x: np.ndarray | float) -> np.ndarray:
    """ln|Gamma(x)| elementwise, +inf at non-positive-integer poles."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    out[pos] = sc.gammaln(x[pos])
    neg = ~pos
    if np.any(neg):
        xn = x[neg]
        with np.errstate(divide="ignore"):
            o = math.log(math.pi) - np.log(np.abs(np.sin(np.pi * xn))) \
                - sc.gammaln(1.0 - xn)
        near = np.abs(xn - np.round(xn)) <= _POLE_TOL * (1.0 + np.abs(xn))
        o[near] = np.inf
        out[neg] = o
    return out


def gamma_sign(x: np.ndarray | float) -> np.ndarray:
    """Sign of Gamma(x) elementwise (0 on a pole)."""
    x = np.asarray(x, dtype=float)
    s = np.where(x > 0, 1.0, np.sign(np.sin(np.pi * x)))
    pole = (x <= 0) & (np.abs(x - np.round(x)) <= _POLE_TOL * (1.0 + np.abs(x)))
    return np.where(pole, 0.0, s)


def pochhammer(a: float, k: int) -> float:
    """Rising factorial (a)_k = a (a+1) ... (a+k-1); (a)_0 = 1."""
    if k < 0:
        raise ValueError("pochhammer requires k >= 0")
    p = 1.0
    for i in range(k):
        p *= a + i
    return p


def scaled_fsum(signs: np.ndarray, lnmags: np.ndarray) -> tuple[float, float, float]:
    """Compensated sum of sign*exp(lnmag) terms.

    Returns (value, condition, ln_sum_of_abs_terms).  Terms with
    lnmag = -inf are dropped.  The value itself is sign-scaled back from
    the max-term scaling; raises NonConvergence on overflow.
    """
    finite = np.isfinite(lnmags)
    if not np.any(finite):
        return 0.0, 1.0, -math.inf
    ln = lnmags[finite]
    sg = signs[finite]
    m = float(np.max(ln))
    t = sg * np.exp(ln - m)
    s = math.fsum(t.tolist())
    a = math.fsum(np.abs(t).tolist())
    if m > _LN_OVERFLOW and s != 0.0 and m + math.log(abs(s)) > _LN_OVERFLOW:
        raise NonConvergence(f"series magnitude overflow (ln scale {m:.1f})")
    value = s * math.exp(m) if m <= _LN_OVERFLOW else math.exp(m + math.log(abs(s))) * math.copysign(1.0, s)
    cond = a / abs(s) if s != 0.0 else math.inf if a > 0 else 1.0
    ln_abssum = m + math.log(a) if a > 0 else -math.inf
    return value, cond, ln_abssum


def mp_dps_for(cond: float) -> int:
    """Working digits for the extended-precision fallback at a given condition."""
    if not math.isfinite(cond) or cond <= 1.0:
        return 30
    return min(160, 22 + int(math.log10(cond)) + 4)


# --------------------------------------------------------------------------
# Prabhakar (three-parameter Mittag-Leffler) function
# --------------------------------------------------------------------------

def _prabhakar_terms(alpha: float, beta: float, gamma: float, z: float,
                     kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """(sign, ln|term|) arrays of the Prabhakar series, k = 0..kmax-1."""
    k = np.arange(kmax, dtype=float)
    ln_poch = np.zeros(kmax)
    sg_poch = np.ones(kmax)
    if kmax > 1:
        fac = gamma + k[:-1]
        dead = np.abs(fac) <= 1e-300
        with np.errstate(divide="ignore"):
            lf = np.where(dead, -np.inf, np.log(np.abs(fac)))
        sf = np.where(dead, 0.0, np.sign(fac))
        ln_poch[1:] = np.cumsum(lf)
        sg_poch[1:] = np.cumprod(sf)
    arg = alpha * k + beta
    from scipy.special import gammaln
    ln = ln_poch + k * math.log(abs(z)) - lngamma_abs(arg) - gammaln(k + 1.0)
    sg = sg_poch * gamma_sign(arg)
    if z < 0:
        sg = sg * np.where(k % 2 == 0, 1.0, -1.0)
    return sg, ln


def prabhakar_e(alpha: float, beta: float, gamma: float, z: float,
                ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """E^gamma_{alpha,beta}(z) = sum_k (gamma)_k z^k / (Gamma(alpha k + beta) k!).

    beta may be zero or negative; pole terms vanish through rgamma.
    """
    if alpha <= 0:
        raise ValueError("prabhakar_e requires alpha > 0")
    if not math.isfinite(z):
        raise ValueError("prabhakar_e requires finite z")
    if z == 0.0 or gamma == 0.0:
        # only k = 0 survives ((0)_k = 0 for k >= 1)
        return rgamma(beta)
    kmax = 12
    while True:
        sg, ln = _prabhakar_terms(alpha, beta, gamma, z, kmax)
        value, cond, _ = scaled_fsum(sg, ln)
        tail = ln[-ctrl.tail_run:]
        tail_mag = float(np.max(np.where(np.isfinite(tail), tail, -np.inf)))
        if tail_mag == -math.inf or tail_mag < math.log(ctrl.cutoff(value)):
            break
        if kmax >= ctrl.max_terms:
            raise NonConvergence(
                f"prabhakar_e({alpha}, {beta}, {gamma}, z={z}) not converged "
                f"within {ctrl.max_terms} terms")
        kmax = min(2 * kmax, ctrl.max_terms)
    if cond > COND_FALLBACK and extended_enabled():
        return _prabhakar_e_mp(alpha, beta, gamma, z, mp_dps_for(cond), ctrl)
    return value


def _prabhakar_e_mp(alpha: float, beta: float, gamma: float, z: float,
                    dps: int, ctrl: SeriesControl) -> float:
    with mpmath.workdps(dps):
        a, b, g, zz = map(mpmath.mpf, (alpha, beta, gamma, z))
        total = mpmath.mpf(0)
        poch = mpmath.mpf(1)
        small_run = 0
        for k in range(ctrl.max_terms * 4):
            if k > 0:
                fac = g + k - 1
                if fac == 0:
                    break
                poch *= fac
            arg = a * k + b
            if nonpos_int_order(float(arg)) is None:
                term = poch * zz ** k / (mpmath.gamma(arg) * mpmath.factorial(k))
                total += term
                if abs(term) <= max(mpmath.mpf(ctrl.abs_tol) * 1e-4,
                                    mpmath.mpf(1e-30) * abs(total)):
                    small_run += 1
                    if small_run >= ctrl.tail_run:
                        break
                else:
                    small_run = 0
        return float(total)


# --------------------------------------------------------------------------
# two-variable double series E12
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class E12Params:
    """Parameter row of the double series E12.

    The numerator gamma has argument a1*n + b1*m + d1; the denominator is
    Gamma(a2*n + b2*m + d2) Gamma(a3*n + d3) Gamma(a4*n + d4) Gamma(b3*m + d5).
    """

    a1: float
    b1: float
    d1: float
    a2: float
    b2: float
    d2: float
    a3: float
    d3: float
    a4: float
    d4: float
    b3: float
    d5: float

    @property
    def delta1(self) -> float:
        return self.a2 + self.a3 + self.a4 - self.a1

    @property
    def delta2(self) -> float:
        return self.b2 + self.b3 - self.b1

    @property
    def convergent(self) -> bool:
        return self.delta1 > 0 and self.delta2 > 0


def _e12_term(p: E12Params, n: int, m: int) -> tuple[float, float]:
    """(sign, ln|coefficient|) of the (n, m) gamma-quotient coefficient.

    Resolves simultaneous numerator/denominator poles by the paired limit
    Gamma(-j+eps)/Gamma(-l+eps) -> (-1)^(j-l) l!/j!; an unmatched numerator
    pole raises InvalidTerm.
    """
    w = p.a1 * n + p.b1 * m + p.d1
    dens = (p.a2 * n + p.b2 * m + p.d2, p.a3 * n + p.d3,
            p.a4 * n + p.d4, p.b3 * m + p.d5)
    jnum = nonpos_int_order(w)
    pole_idx = [i for i, z in enumerate(dens) if nonpos_int_order(z) is not None]
    if jnum is None:
        if pole_idx:
            return 0.0, -math.inf
        ln = float(lngamma_abs(w))
        sg = float(gamma_sign(w))
        for z in dens:
            ln -= float(lngamma_abs(z))
            sg *= float(gamma_sign(z))
        return sg, ln
    if not pole_idx:
        raise InvalidTerm(
            f"E12 numerator gamma pole at (n, m) = ({n}, {m}) "
            f"(argument {w!r}) with non-zero denominator product")
    if len(pole_idx) >= 2:
        return 0.0, -math.inf  # higher-order denominator zero kills the term
    lpole = nonpos_int_order(dens[pole_idx[0]])
    assert lpole is not None
    # lim Gamma(-j+eps)/Gamma(-l+eps) = (-1)^(j-l) l!/j!
    sg = -1.0 if (jnum - lpole) % 2 else 1.0
    ln = math.lgamma(lpole + 1) - math.lgamma(jnum + 1)
    for i, z in enumerate(dens):
        if i == pole_idx[0]:
            continue
        ln -= float(lngamma_abs(z))
        sg *= float(gamma_sign(z))
    return sg, ln


def e12(p: E12Params, x: float, y: float,
        ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """The double series sum_{n,m} Gamma-quotient * x^n y^m.

    Summed over expanding square frontiers max(n, m) = L with compensated
    accumulation; requires p.convergent.
    """
    if not p.convergent:
        raise DivergentParameters(
            f"E12 parameters have Delta1 = {p.delta1!r}, Delta2 = {p.delta2!r}; "
            "both must be positive")
    signs: list[float] = []
    lns: list[float] = []
    ln_ax = math.log(abs(x)) if x != 0.0 else -math.inf
    ln_ay = math.log(abs(y)) if y != 0.0 else -math.inf
    sx = math.copysign(1.0, x)
    sy = math.copysign(1.0, y)

    def add_term(n: int, m: int) -> float:
        if (n > 0 and x == 0.0) or (m > 0 and y == 0.0):
            return 0.0
        sg, ln = _e12_term(p, n, m)
        if ln == -math.inf or sg == 0.0:
            return 0.0
        ln += n * ln_ax if n else 0.0
        ln += m * ln_ay if m else 0.0
        sg *= (sx ** n) * (sy ** m)
        signs.append(sg)
        lns.append(ln)
        return sg * math.exp(min(ln, _LN_OVERFLOW))

    running = 0.0
    small_layers = 0
    for layer in range(ctrl.max_terms):
        layer_max = 0.0
        for m in range(layer + 1):
            layer_max = max(layer_max, abs(add_term(layer, m)))
        for n in range(layer):
            layer_max = max(layer_max, abs(add_term(n, layer)))
        running = math.fsum(s * math.exp(min(l, _LN_OVERFLOW))
                            for s, l in zip(signs, lns))
        if layer_max <= ctrl.cutoff(running):
            small_layers += 1
            if small_layers >= ctrl.tail_run:
                break
        else:
            small_layers = 0
    else:
        raise NonConvergence(
            f"e12 frontier did not settle within {ctrl.max_terms} layers "
            f"at (x, y) = ({x}, {y})")
    value, cond, _ = scaled_fsum(np.array(signs), np.array(lns))
    if cond > COND_FALLBACK and extended_enabled():
        return _e12_mp(p, x, y, mp_dps_for(cond), ctrl)
    return value


def _e12_mp(p: E12Params, x: float, y: float, dps: int,
            ctrl: SeriesControl) -> float:
    with mpmath.workdps(dps):
        xx, yy = mpmath.mpf(x), mpmath.mpf(y)
        total = mpmath.mpf(0)
        small_layers = 0
        for layer in range(ctrl.max_terms):
            layer_max = mpmath.mpf(0)
            pts = [(layer, m) for m in range(layer + 1)]
            pts += [(n, layer) for n in range(layer)]
            for n, m in pts:
                if (n > 0 and x == 0.0) or (m > 0 and y == 0.0):
                    continue
                sg, ln = _e12_term(p, n, m)
                if ln == -math.inf or sg == 0.0:
                    continue
                w = p.a1 * n + p.b1 * m + p.d1
                dens = (p.a2 * n + p.b2 * m + p.d2, p.a3 * n + p.d3,
                        p.a4 * n + p.d4, p.b3 * m + p.d5)
                jnum = nonpos_int_order(w)
                if jnum is None:
                    coeff = mpmath.gamma(w)
                    for z in dens:
                        coeff /= mpmath.gamma(z)
                else:
                    coeff = mpmath.mpf(sg) * mpmath.exp(mpmath.mpf(ln))
                term = coeff * xx ** n * yy ** m
                total += term
                layer_max = max(layer_max, abs(term))
            if layer_max <= max(mpmath.mpf(ctrl.abs_tol) * 1e-6,
                                mpmath.mpf(1e-30) * abs(total)):
                small_layers += 1
                if small_layers >= ctrl.tail_run:
                    break
            else:
                small_layers = 0
        return float(total)


# --------------------------------------------------------------------------
# Wright-type function
# --------------------------------------------------------------------------

def wright_e(beta: float, delta1: float, z: float,
             ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """e^{1,delta1}_{1,beta}(z) = sum_n z^n / (n! Gamma(delta1 - beta n)).

    The series form that makes the delta = 0 reduction of the fundamental
    kernel exact; beta must lie in (0, 1).
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("wright_e requires beta in (0, 1)")
    if z == 0.0:
        return rgamma(delta1)
    signs: list[float] = []
    lns: list[float] = []
    ln_az = math.log(abs(z))
    sz = math.copysign(1.0, z)
    running = 0.0
    small_run = 0
    for n in range(ctrl.max_terms):
        arg = delta1 - beta * n
        if nonpos_int_order(arg) is not None:
            term = 0.0
        else:
            ln = n * ln_az - math.lgamma(n + 1) - float(lngamma_abs(arg))
            sg = (sz ** n) * float(gamma_sign(arg))
            signs.append(sg)
            lns.append(ln)
            term = sg * math.exp(min(ln, _LN_OVERFLOW))
        running += term
        if abs(term) <= ctrl.cutoff(running) and n > abs(z):
            small_run += 1
            if small_run >= ctrl.tail_run:
                break
        else:
            small_run = 0
    else:
        raise NonConvergence(
            f"wright_e({beta}, {delta1}, z={z}) not converged within "
            f"{ctrl.max_terms} terms")
    value, cond, _ = scaled_fsum(np.array(signs), np.array(lns))
    if cond > COND_FALLBACK and extended_enabled():
        return _wright_e_mp(beta, delta1, z, mp_dps_for(cond), ctrl)
    return value


def _wright_e_mp(beta: float, delta1: float, z: float, dps: int,
                 ctrl: SeriesControl) -> float:
    with mpmath.workdps(dps):
        b, d, zz = map(mpmath.mpf, (beta, delta1, z))
        total = mpmath.mpf(0)
        small_run = 0
        for n in range(ctrl.max_terms * 4):
            arg = d - b * n
            if nonpos_int_order(float(arg)) is not None:
                continue
            term = zz ** n / (mpmath.factorial(n) * mpmath.gamma(arg))
            total += term
            if abs(term) <= mpmath.mpf(1e-30) * (1 + abs(total)) and n > abs(z):
                small_run += 1
                if small_run >= ctrl.tail_run:
                    break
            else:
                small_run = 0
        return float(total)
