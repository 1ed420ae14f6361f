"""Prabhakar fractional integral and derivatives via product integration.

The integral operator convolves a time function against the kernel
u^(order-1) E^weight_{alpha,order}[delta u^alpha].  Product integration
replaces the smooth factor by a local quadratic (or linear) interpolant on
a graded mesh and integrates the kernel moments in closed form, so the
weak endpoint singularity never degrades the order.  One generic engine
serves the integral, the Riemann-Liouville-type derivative's inner step,
and the Caputo-type variant, which differ only in their (alpha, order,
weight, delta) quadruple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from .errors import DomainError, QuadratureFailure, StepUnderflow
from .special import DEFAULT_CTRL, SeriesControl, lngamma_abs, gamma_sign, prabhakar_e

__all__ = [
    "QuadratureSpec",
    "DEFAULT_QUAD",
    "TimeFunction",
    "OpQuadruple",
    "graded_mesh",
    "weighted_integral",
    "prabhakar_integral",
    "power_rule_integral",
    "prl_derivative",
    "pc_derivative",
]

OpQuadruple = tuple[float, float, float, float]  # (alpha, order, weight, delta)


@dataclass(frozen=True)
class QuadratureSpec:
    """Graded-mesh product-integration rule for weakly singular convolutions.

    ``grading`` is the mesh-grading exponent toward singular endpoints;
    None resolves to 2/beta1 of the parameters in use (both endpoints are
    clustered).  ``interp_order`` is the local polynomial degree.
    """

    panels: int = 64
    grading: float | None = None
    interp_order: int = 2

    def __post_init__(self) -> None:
        if self.panels < 4:
            raise ValueError("panels must be >= 4")
        if self.grading is not None and self.grading < 1.0:
            raise ValueError("grading must be >= 1")
        if self.interp_order not in (1, 2):
            raise ValueError("interp_order must be 1 or 2")

    def resolve_grading(self, beta1: float) -> float:
        return self.grading if self.grading is not None else 2.0 / beta1


DEFAULT_QUAD = QuadratureSpec()


class TimeFunction:
    """Scalar function of t on (0, T] with declared power behavior t^sigma0
    near zero (sigma0 in (-1, 0]).

    Sampled inputs are interpolated with the singularity factored out:
    the table of t^(-sigma0) f(t) is interpolated (shape-preserving cubic)
    and the power is multiplied back, which preserves accuracy near t = 0.
    Below the first sample the smooth part is frozen at its first value.
    """

    def __init__(self, fn: Callable[[float], float], sigma0: float = 0.0):
        if not -1.0 < sigma0 <= 0.0:
            raise ValueError("sigma0 must lie in (-1, 0]")
        self._fn = fn
        self.sigma0 = sigma0

    @classmethod
    def from_callable(cls, fn: Callable[[float], float],
                      sigma0: float = 0.0) -> "TimeFunction":
        return cls(fn, sigma0)

    @classmethod
    def from_samples(cls, ts: Sequence[float], values: Sequence[float],
                     sigma0: float = 0.0) -> "TimeFunction":
        t = np.asarray(ts, dtype=float)
        v = np.asarray(values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
            raise ValueError("need matching 1-d sample arrays of length >= 2")
        if not np.all(np.diff(t) > 0):
            raise ValueError("sample grid must be strictly increasing")
        if t[0] <= 0:
            raise ValueError("sample times must be positive")
        smooth = v * t ** (-sigma0)
        interp = PchipInterpolator(t, smooth, extrapolate=True)
        t0 = float(t[0])
        s0 = float(smooth[0])

        def fn(x: float) -> float:
            s = s0 if x < t0 else float(interp(x))
            return s * x ** sigma0

        return cls(fn, sigma0)

    @classmethod
    def zero(cls) -> "TimeFunction":
        return cls(lambda t: 0.0, 0.0)

    def __call__(self, t: float) -> float:
        return self._fn(t)


def as_time_function(f) -> TimeFunction:
    if isinstance(f, TimeFunction):
        return f
    if callable(f):
        return TimeFunction(f, 0.0)
    raise TypeError(f"cannot interpret {f!r} as a time function")


# --------------------------------------------------------------------------
# meshes and panel rules
# --------------------------------------------------------------------------

def graded_mesh(lo: float, hi: float, panels: int, grading: float,
                ends: str = "both") -> np.ndarray:
    """Panel edges on [lo, hi], clustered with exponent ``grading``.

    ends: 'left', 'right', or 'both' (symmetric map tau^r/(tau^r+(1-tau)^r)).
    """
    tau = np.linspace(0.0, 1.0, panels + 1)
    r = grading
    if ends == "left":
        y = tau ** r
    elif ends == "right":
        y = 1.0 - (1.0 - tau) ** r
    elif ends == "both":
        tr = tau ** r
        y = tr / (tr + (1.0 - tau) ** r)
    else:
        raise ValueError("ends must be 'left', 'right', or 'both'")
    return lo + (hi - lo) * y


def _power_moments(a: float, b: float, p0: float, nmom: int) -> np.ndarray:
    """m_j = integral_a^b y^(p0+j) dy for j = 0..nmom-1, relative-accurate."""
    j = np.arange(nmom, dtype=float)
    p = p0 + j + 1.0
    if a == 0.0:
        return b ** p / p
    ln_ratio = math.log(a / b)
    return b ** p * (-np.expm1(p * ln_ratio)) / p


def _power_moments_vec(a: np.ndarray, b: np.ndarray, p0: float) -> np.ndarray:
    """integral_a^b y^p0 dy per panel, relative-accurate differences."""
    p = p0 + 1.0
    bp = b ** p
    out = np.where(a > 0,
                   bp * (-np.expm1(p * (np.log(np.where(a > 0, a, 1.0))
                                        - np.log(b)))),
                   bp) / p
    return out


def _centered_moments(raw: np.ndarray, c: float, a: float, b: float,
                      p0: float) -> np.ndarray:
    """Convert raw moments of y^p0 * y^j into moments of y^p0 * (y-c)^j."""
    m0, m1, m2 = raw
    return np.array([m0, m1 - c * m0, m2 - 2 * c * m1 + c * c * m0])


def _panel_quad(nodes: np.ndarray, values: np.ndarray, cmom: np.ndarray,
                c: float, order: int) -> float:
    """Integrate the local interpolant against centered weight moments.

    The interpolant is built in the scaled coordinate (x - c)/h so the
    Vandermonde solve stays well conditioned on arbitrarily small panels.
    """
    h = float(np.max(nodes) - np.min(nodes))
    x = (nodes - c) / h
    scaled_mom = np.array([cmom[0], cmom[1] / h, cmom[2] / h ** 2])
    if order == 1:
        f0, f2 = values[0], values[2]
        a1 = (f2 - f0) / (x[2] - x[0])
        a0 = f0 - a1 * x[0]
        return a0 * scaled_mom[0] + a1 * scaled_mom[1]
    v = np.vander(x, 3, increasing=True)
    coef = np.linalg.solve(v, values)
    return float(coef @ scaled_mom)


def weighted_nodes(hi: float, q: QuadratureSpec, grading: float,
                   ends: str = "both",
                   avoid_hi: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(edges, (P, 3) sample nodes) of the weighted product rule on [0, hi].

    Sample nodes stay strictly inside (0, hi] (below hi when avoid_hi), so
    integrands may be undefined at the endpoints."""
    if hi <= 0.0:
        raise DomainError(f"integration range must be positive, got {hi}")
    edges = graded_mesh(0.0, hi, q.panels, grading, ends)
    a = edges[:-1]
    b = edges[1:]
    h = b - a
    nodes = np.stack([a, a + 0.5 * h, b], axis=1)
    nodes[0, 0] = a[0] + 0.25 * h[0]
    if avoid_hi:
        nodes[-1, 2] = b[-1] - 0.25 * h[-1]
    return edges, nodes


def weighted_assemble(edges: np.ndarray, nodes: np.ndarray, vals: np.ndarray,
                      sigma0: float, interp_order: int = 2) -> float:
    """Assemble integral_0^hi y^sigma0 * smooth(y) dy from node values of
    the smooth factor (weight moments exact per panel)."""
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure("integrand not finite at quadrature nodes")
    a = edges[:-1]
    b = edges[1:]
    raw = np.stack([_power_moments_vec(a, b, sigma0 + j) for j in range(3)],
                   axis=1)
    return _batched_panel_quad(nodes, vals, raw, 0.5 * (a + b), b - a,
                               interp_order)


def weighted_integral(smooth: Callable[[float], float], hi: float,
                      q: QuadratureSpec, sigma0: float = 0.0, *,
                      grading: float = 4.0, ends: str = "both",
                      avoid_hi: bool = False) -> float:
    """integral_0^hi y^sigma0 * smooth(y) dy by graded product integration.

    The weight y^sigma0 is integrated exactly against a local interpolant
    of ``smooth``.
    """
    edges, nodes = weighted_nodes(hi, q, grading, ends, avoid_hi)
    vals = np.array([smooth(float(x)) for x in nodes.ravel()],
                    dtype=float).reshape(nodes.shape)
    return weighted_assemble(edges, nodes, vals, sigma0, q.interp_order)


# --------------------------------------------------------------------------
# Prabhakar kernel moments
# --------------------------------------------------------------------------

def _as_quadruple(p) -> OpQuadruple:
    if hasattr(p, "quadruple"):
        return p.quadruple()
    alpha, order, weight, delta = p
    return (float(alpha), float(order), float(weight), float(delta))


def _kernel_series_coeffs(op: OpQuadruple, u_max: float,
                          ctrl: SeriesControl) -> tuple[np.ndarray, np.ndarray]:
    """Signed coefficients c_k = (weight)_k delta^k rgamma(alpha k + order)/k!
    truncated where |c_k| u_max^(alpha k) stops mattering."""
    alpha, order, weight, delta = op
    kmax = 1 if delta == 0.0 else 16
    while True:
        k = np.arange(kmax, dtype=float)
        ln_poch = np.zeros(kmax)
        sg_poch = np.ones(kmax)
        if kmax > 1:
            fac = weight + k[:-1]
            dead = np.abs(fac) <= 1e-300
            with np.errstate(divide="ignore"):
                lf = np.where(dead, -np.inf, np.log(np.abs(fac)))
            sf = np.where(dead, 0.0, np.sign(fac))
            ln_poch[1:] = np.cumsum(lf)
            sg_poch[1:] = np.cumprod(sf)
        arg = alpha * k + order
        ln_c = ln_poch - lngamma_abs(arg) - gammaln(k + 1.0)
        sg_c = sg_poch * gamma_sign(arg)
        if delta != 0.0:
            ln_c = ln_c + k * math.log(abs(delta))
            sg_c = sg_c * np.where(k % 2 == 0, 1.0, math.copysign(1.0, delta))
        ln_scale = ln_c + alpha * k * (math.log(u_max) if u_max > 0 else 0.0)
        if delta == 0.0:
            break
        finite = np.isfinite(ln_scale)
        if not np.any(finite):
            break
        peak = np.max(ln_scale[finite])
        tail = ln_scale[-3:]
        if np.all(~np.isfinite(tail) | (tail < peak - 42.0)) or kmax >= ctrl.max_terms:
            break
        kmax = min(2 * kmax, ctrl.max_terms)
    with np.errstate(over="ignore"):
        c = sg_c * np.exp(ln_c)
    c[~np.isfinite(c)] = 0.0
    return k, c


def kernel_panel_moments(op: OpQuadruple, u_edges: np.ndarray, jmax: int,
                         ctrl: SeriesControl = DEFAULT_CTRL) -> np.ndarray:
    """Moments mu[i, j] = integral over panel i of u^(order-1+j) E-kernel du.

    u_edges must be increasing and non-negative; panel i is
    [u_edges[i], u_edges[i+1]].
    """
    alpha, order, weight, delta = op
    if order < 0:
        raise DomainError(f"kernel order must be >= 0, got {order}")
    u_edges = np.asarray(u_edges, dtype=float)
    u_max = float(u_edges[-1])
    k, c = _kernel_series_coeffs(op, u_max, ctrl)
    npan = len(u_edges) - 1
    out = np.zeros((npan, jmax + 1))
    live = c != 0.0
    kl = k[live]
    cl = c[live]
    a = u_edges[:-1][:, None]
    b = u_edges[1:][:, None]
    pos = (a > 0).ravel()
    with np.errstate(divide="ignore"):
        ln_a = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), 0.0)
        ln_b = np.log(np.where(b > 0, b, 1.0))
    for j in range(jmax + 1):
        p = (alpha * kl + order + j)[None, :]  # antiderivative power u^p / p
        bp = np.exp(p * ln_b)
        diff = np.where(b > 0, bp, 0.0)
        if np.any(pos):
            diff[pos] = (bp * -np.expm1(p * (ln_a - ln_b)))[pos]
        out[:, j] = (diff / p) @ cl
    return out


def kernel_values(op: OpQuadruple, us: np.ndarray,
                  ctrl: SeriesControl = DEFAULT_CTRL) -> np.ndarray:
    """Kernel u^(order-1) E^weight_{alpha,order}[delta u^alpha] on an array."""
    alpha, order, weight, delta = op
    us = np.asarray(us, dtype=float)
    if np.any(us <= 0.0):
        raise DomainError("kernel_values requires positive arguments")
    k, c = _kernel_series_coeffs(op, float(np.max(us)), ctrl)
    live = c != 0.0
    powers = alpha * k[live] + order - 1.0
    return np.exp(np.log(us)[:, None] * powers[None, :]) @ c[live]


def _batched_panel_quad(nodes: np.ndarray, vals: np.ndarray, raw: np.ndarray,
                        centers: np.ndarray, h: np.ndarray,
                        interp_order: int) -> float:
    """Sum of per-panel integrals of local interpolants against moments.

    nodes/vals: (P, 3) sample points and values; raw: (P, 3) raw weight
    moments (powers x^0, x^1, x^2); centers/h: (P,) moment recentering.
    """
    cm = np.empty_like(raw)
    cm[:, 0] = raw[:, 0]
    cm[:, 1] = (raw[:, 1] - centers * raw[:, 0]) / h
    cm[:, 2] = (raw[:, 2] - 2.0 * centers * raw[:, 1]
                + centers ** 2 * raw[:, 0]) / h ** 2
    x = (nodes - centers[:, None]) / h[:, None]
    if interp_order == 1:
        a1 = (vals[:, 2] - vals[:, 0]) / (x[:, 2] - x[:, 0])
        a0 = vals[:, 0] - a1 * x[:, 0]
        return math.fsum((a0 * cm[:, 0] + a1 * cm[:, 1]).tolist())
    v = x[:, :, None] ** np.arange(3)[None, None, :]
    coef = np.linalg.solve(v, vals[:, :, None])[:, :, 0]
    return math.fsum(np.einsum("pj,pj->p", coef, cm).tolist())


# --------------------------------------------------------------------------
# the operators
# --------------------------------------------------------------------------

def _panel_nodes(edges: np.ndarray, avoid_lo: bool = True,
                 avoid_hi: bool = False) -> np.ndarray:
    """(P, 3) sample nodes per panel: endpoints plus midpoint, with the
    outermost samples pulled inside when an endpoint must be avoided."""
    a = edges[:-1]
    b = edges[1:]
    h = b - a
    nodes = np.stack([a, a + 0.5 * h, b], axis=1)
    if avoid_lo:
        nodes[0, 0] = a[0] + 0.25 * h[0]
    if avoid_hi:
        nodes[-1, 2] = b[-1] - 0.25 * h[-1]
    return nodes


def prabhakar_integral(f, p, t: float, q: QuadratureSpec = DEFAULT_QUAD,
                       ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """Prabhakar fractional integral
    integral_0^t (t-s)^(order-1) E^weight_{alpha,order}[delta (t-s)^alpha] f(s) ds.

    Split at t/2 so each half has a single awkward factor: on [0, t/2] the
    kernel is smooth and f's declared s^sigma0 singularity is integrated
    exactly (power moments against the interpolated smooth part); on
    [t/2, t] f is smooth and the kernel's weak endpoint singularity is
    integrated exactly (termwise Beta moments against the interpolated f).
    """
    op = _as_quadruple(p)
    alpha, order, weight, delta = op
    if t <= 0.0:
        raise DomainError(f"prabhakar_integral requires t > 0, got {t}")
    if order < 0.0:
        raise DomainError("operator order must be >= 0")
    tf = as_time_function(f)
    sig = tf.sigma0
    grading = q.resolve_grading(max(order, 0.25) if order > 0 else 0.5)
    half = 0.5 * t
    npan = max(q.panels // 2, 4)

    # [0, t/2]: weight s^sigma0, smooth factor s^(-sigma0) f(s) K(t-s)
    edges1 = graded_mesh(0.0, half, npan, grading, "left")
    nodes1 = _panel_nodes(edges1, avoid_lo=True)
    flat1 = nodes1.ravel()
    fv1 = np.array([tf(s) for s in flat1])
    kv1 = kernel_values(op, t - flat1, ctrl)
    vals1 = (fv1 * flat1 ** (-sig) * kv1).reshape(nodes1.shape)
    if not np.all(np.isfinite(vals1)):
        raise QuadratureFailure(f"integrand not finite on [0, {half}]")
    a1e, b1e = edges1[:-1], edges1[1:]
    raw1 = np.stack([_power_moments_vec(a1e, b1e, sig + j) for j in range(3)],
                    axis=1)
    part1 = _batched_panel_quad(nodes1, vals1, raw1, 0.5 * (a1e + b1e),
                                b1e - a1e, q.interp_order)

    # [t/2, t]: u = t - s in [0, t/2], kernel moments exact, f smooth
    u_edges = graded_mesh(0.0, half, npan, grading, "left")
    mom = kernel_panel_moments(op, u_edges, 2, ctrl)
    nodes2 = _panel_nodes(u_edges, avoid_lo=True)
    fv2 = np.array([tf(t - u) for u in nodes2.ravel()]).reshape(nodes2.shape)
    if not np.all(np.isfinite(fv2)):
        raise QuadratureFailure(f"f not finite on [{half}, {t}]")
    a2e, b2e = u_edges[:-1], u_edges[1:]
    part2 = _batched_panel_quad(nodes2, fv2, mom, 0.5 * (a2e + b2e),
                                b2e - a2e, q.interp_order)

    total = part1 + part2
    if not math.isfinite(total):
        raise QuadratureFailure(f"prabhakar_integral produced {total} at t={t}")
    return total


def power_rule_integral(sigma: float, p, t: float,
                        ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """Closed form of the integral applied to s^(sigma-1):
    Gamma(sigma) t^(order+sigma-1) E^weight_{alpha,order+sigma}[delta t^alpha]."""
    alpha, order, weight, delta = _as_quadruple(p)
    if sigma <= 0.0:
        raise DomainError("power_rule_integral requires sigma > 0")
    if t <= 0.0:
        raise DomainError("power_rule_integral requires t > 0")
    return math.gamma(sigma) * t ** (order + sigma - 1.0) * prabhakar_e(
        alpha, order + sigma, weight, delta * t ** alpha, ctrl)


def prl_derivative(f, p, t: float, q: QuadratureSpec = DEFAULT_QUAD,
                   ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """Riemann-Liouville-type Prabhakar derivative (order in (0, 1]):
    d/dt of the complementary integral I^{alpha,1-order,-weight,delta} f.

    The outer derivative is a central difference with h = max(1e-5, 1e-4 t)
    on the product-integrated inner function (its quadrature error varies
    smoothly with t, so differencing does not amplify it); a second
    half-step estimate triggers Richardson extrapolation when they differ.
    """
    alpha, order, weight, delta = _as_quadruple(p)
    if not 0.0 < order <= 1.0:
        raise DomainError("prl_derivative requires order in (0, 1]")
    if t <= 2e-12:
        raise StepUnderflow(f"finite-difference step underflows at t={t}")
    comp = (alpha, 1.0 - order, -weight, delta)

    def inner(tt: float) -> float:
        return prabhakar_integral(f, comp, tt, q, ctrl)

    h = max(1e-5, 1e-4 * t)
    if t - h <= 0.0:
        h = 0.5 * t
    d1 = (inner(t + h) - inner(t - h)) / (2.0 * h)
    d2 = (inner(t + 0.5 * h) - inner(t - 0.5 * h)) / h
    if abs(d1 - d2) > ctrl.rel_tol * max(abs(d1), abs(d2), 1e-300):
        return (4.0 * d2 - d1) / 3.0
    return d2


def pc_derivative(f, p, t: float, q: QuadratureSpec = DEFAULT_QUAD,
                  ctrl: SeriesControl = DEFAULT_CTRL) -> float:
    """Caputo-type Prabhakar derivative: the complementary integral applied
    to f', with f' sampled by central differences (f absolutely continuous
    and f(0) finite are caller obligations)."""
    alpha, order, weight, delta = _as_quadruple(p)
    if not 0.0 < order <= 1.0:
        raise DomainError("pc_derivative requires order in (0, 1]")
    tf = as_time_function(f)

    def fprime(s: float) -> float:
        hs = max(1e-7, 1e-5 * s)
        if s - hs <= 0.0:
            return (tf(s + hs) - tf(s)) / hs
        return (tf(s + hs) - tf(s - hs)) / (2.0 * hs)

    comp = (alpha, 1.0 - order, -weight, delta)
    return prabhakar_integral(TimeFunction(fprime, 0.0), comp, t, q, ctrl)
