"""Right-hand side assembly, Neumann-series solution of the boundary
Volterra equation, and recovery of the unknown boundary function.

The unknown half-order boundary trace psi enters through
psi1(t) = F(t) + integral_0^t F(y) sum_{n>=1} omega(t-y, 2na) dy, after
which psi = 2 D^{alpha,beta1,gamma1,delta} psi1.  F and psi1 are tabulated
once per problem on graded time grids and interpolated; the derivative
step then reuses the generic product-integration machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import QuadratureFailure
from .kernels import Domain, FracParams, omega, w_kernel, w_kernel_vec
from .prabhakar_ops import (DEFAULT_QUAD, QuadratureSpec, TimeFunction,
                            graded_mesh, prl_derivative, weighted_assemble,
                            weighted_integral, weighted_nodes)
from .special import DEFAULT_CTRL, SeriesControl

__all__ = [
    "SourceFunction",
    "ProblemData",
    "assemble_big_f",
    "neumann_psi1",
    "recover_psi",
    "psi_profile",
]


@dataclass(frozen=True)
class SourceFunction:
    """Source f(t, x) with declared time behavior t^sigma0 near t = 0.

    ``separable`` marks f(t, x) = time(t) * space(x); the Volterra assembly
    exploits that to tabulate its spatial projection once.
    """

    fn: Callable[[float, float], float]
    sigma0: float = 0.0
    time: TimeFunction | None = None
    space: Callable[[float], float] | None = None

    @classmethod
    def separable(cls, time: TimeFunction,
                  space: Callable[[float], float]) -> "SourceFunction":
        return cls(fn=lambda t, x: time(t) * space(x), sigma0=time.sigma0,
                   time=time, space=space)

    @property
    def is_separable(self) -> bool:
        return self.time is not None and self.space is not None

    def __call__(self, t: float, x: float) -> float:
        return self.fn(t, x)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Boundary values, initial weight, and source of the first boundary
    value problem on (0, T) x (0, a)."""

    phi0: TimeFunction
    phi1: TimeFunction
    tau: Callable[[float], float]
    f: SourceFunction | None
    dom: Domain
    p: FracParams
    compat_tol: float = 1e-2

    def has_tau(self) -> bool:
        xs = np.linspace(0.0, self.dom.a, 17)
        return any(abs(self.tau(float(x))) > 0.0 for x in xs)


def _f_sigma(data: ProblemData) -> float:
    """Power behavior of F(t) near t = 0 (drives mesh grading)."""
    sig = data.phi1.sigma0
    if data.has_tau():
        sig = min(sig, data.p.beta1 - 1.0)
    if data.f is not None:
        sig = min(sig, data.p.beta1 - 1.0 + min(data.f.sigma0 + 1.0, 0.0))
    return max(sig, -0.999)


def _tau_w_term(data: ProblemData, t: float, ctrl: SeriesControl,
                q: QuadratureSpec) -> float:
    """integral_0^a tau(s) W(t, a-s, a+s) ds (smooth integrand)."""
    a = data.dom.a
    edges, nodes = weighted_nodes(a, q, 1.5, "both")
    s = nodes.ravel()
    wv = w_kernel_vec(t, a - s, a + s, data.p, ctrl)
    tv = np.array([data.tau(float(x)) for x in s])
    return weighted_assemble(edges, nodes, (tv * wv).reshape(nodes.shape),
                             0.0, q.interp_order)


def _phi0_conv_term(data: ProblemData, t: float, ctrl: SeriesControl,
                    q: QuadratureSpec) -> float:
    """integral_0^t phi0(eta) omega(t-eta, a) deta."""
    sig = data.phi0.sigma0

    def g(eta: float) -> float:
        return data.phi0(eta) * eta ** (-sig) * omega(t - eta, data.dom.a,
                                                      data.p, ctrl)

    grading = q.resolve_grading(data.p.beta1)
    return weighted_integral(g, t, q, sig, grading=grading, ends="both",
                             avoid_hi=True)


class _FTermCache:
    """Per-problem tabulations shared by repeated F/psi evaluations."""

    def __init__(self, data: ProblemData, ctrl: SeriesControl,
                 q: QuadratureSpec):
        self.data = data
        self.ctrl = ctrl
        self.q = q
        self._fsrc_proj: TimeFunction | None = None
        self._f_table: TimeFunction | None = None
        self._psi1_table: TimeFunction | None = None
        self._psi_table: TimeFunction | None = None

    def source_projection(self) -> TimeFunction:
        """g_f(u) = integral_0^a f_space(s) W(u, a-s, a+s) ds for separable f."""
        if self._fsrc_proj is None:
            data, ctrl, q = self.data, self.ctrl, self.q
            assert data.f is not None and data.f.is_separable
            a = data.dom.a
            us = graded_mesh(0.0, data.dom.T, max(q.panels, 48), 3.0, "left")[1:]
            space = data.f.space

            edges, nodes = weighted_nodes(a, q, 1.5, "both")
            sflat = nodes.ravel()
            sp = np.array([space(float(s)) for s in sflat])

            def proj(u: float) -> float:
                wv = w_kernel_vec(u, a - sflat, a + sflat, data.p, ctrl)
                return weighted_assemble(edges, nodes,
                                         (sp * wv).reshape(nodes.shape),
                                         0.0, q.interp_order)

            vals = [proj(float(u)) for u in us]
            self._fsrc_proj = TimeFunction.from_samples(
                us, vals, sigma0=max(data.p.beta1 - 1.0, -0.999))
        return self._fsrc_proj

    def f_term(self, t: float) -> float:
        """integral_0^a integral_0^t f(y, s) W(t-y, a-s, a+s) dy ds."""
        data, ctrl, q = self.data, self.ctrl, self.q
        if data.f is None:
            return 0.0
        sig = data.f.sigma0
        grading = q.resolve_grading(data.p.beta1)
        if data.f.is_separable:
            proj = self.source_projection()
            ftime = data.f.time

            def g(y: float) -> float:
                return ftime(y) * y ** (-sig) * proj(t - y)

            return weighted_integral(g, t, q, sig, grading=grading,
                                     ends="both", avoid_hi=True)

        a = data.dom.a
        edges, nodes = weighted_nodes(a, q, 1.5, "both")
        sflat = nodes.ravel()

        def g(y: float) -> float:
            wv = w_kernel_vec(t - y, a - sflat, a + sflat, data.p, ctrl)
            fv = np.array([data.f(y, float(s)) for s in sflat])
            inner = weighted_assemble(edges, nodes,
                                      (fv * wv).reshape(nodes.shape),
                                      0.0, q.interp_order)
            return inner * y ** (-sig)

        return weighted_integral(g, t, q, sig, grading=grading, ends="both",
                                 avoid_hi=True)

    def big_f(self, t: float) -> float:
        data, ctrl, q = self.data, self.ctrl, self.q
        total = data.phi1(t)
        total -= _phi0_conv_term(data, t, ctrl, q)
        if data.has_tau():
            total -= _tau_w_term(data, t, ctrl, q)
        total -= self.f_term(t)
        if not math.isfinite(total):
            raise QuadratureFailure(f"F(t) not finite at t={t}")
        return total

    def f_table(self) -> TimeFunction:
        if self._f_table is None:
            data = self.data
            sig = _f_sigma(data)
            ts = graded_mesh(0.0, data.dom.T * (1.0 + 1e-9), 110, 3.0,
                             "left")[1:]
            vals = [self.big_f(float(t)) for t in ts]
            self._f_table = TimeFunction.from_samples(ts, vals, sigma0=sig)
        return self._f_table

    def image_kernel(self, dt: float) -> float:
        data, ctrl = self.data, self.ctrl
        return math.fsum(omega(dt, 2.0 * n * data.dom.a, data.p, ctrl)
                         for n in range(1, ctrl.max_images + 1))

    def psi1(self, t: float) -> float:
        data, ctrl, q = self.data, self.ctrl, self.q
        ftab = self.f_table()
        sig = ftab.sigma0

        def g(y: float) -> float:
            return ftab(y) * y ** (-sig) * self.image_kernel(t - y)

        grading = q.resolve_grading(data.p.beta1)
        integral = weighted_integral(g, t, q, sig, grading=grading,
                                     ends="both", avoid_hi=True)
        return self.big_f(t) + integral

    def psi1_table(self) -> TimeFunction:
        if self._psi1_table is None:
            data = self.data
            sig = _f_sigma(data)
            ts = graded_mesh(0.0, data.dom.T * (1.0 + 1e-9), 90, 3.0,
                             "left")[1:]
            vals = [self.psi1(float(t)) for t in ts]
            self._psi1_table = TimeFunction.from_samples(ts, vals, sigma0=sig)
        return self._psi1_table

    def psi(self, t: float) -> float:
        data = self.data
        half = (data.p.alpha, data.p.beta1, data.p.gamma1, data.p.delta)
        return 2.0 * prl_derivative(self.psi1_table(), half, t, self.q,
                                    self.ctrl)

    def psi_table(self) -> TimeFunction:
        if self._psi_table is None:
            data = self.data
            sig = max(min(_f_sigma(data) - data.p.beta1, 0.0), -0.999)
            ts = graded_mesh(0.0, data.dom.T * (1.0 + 1e-9), 90, 3.0,
                             "left")[1:]
            vals = [self.psi(float(t)) for t in ts]
            self._psi_table = TimeFunction.from_samples(ts, vals, sigma0=sig)
        return self._psi_table


_SESSIONS: dict = {}


def _session(data: ProblemData, ctrl: SeriesControl,
             q: QuadratureSpec) -> _FTermCache:
    key = (id(data), ctrl, q)
    s = _SESSIONS.get(key)
    if s is None or s.data is not data:
        if len(_SESSIONS) > 16:
            _SESSIONS.clear()
        s = _FTermCache(data, ctrl, q)
        _SESSIONS[key] = s
    return s


def assemble_big_f(data: ProblemData, t: float,
                   ctrl: SeriesControl = DEFAULT_CTRL,
                   q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """F(t) = phi1(t) - integral phi0 omega(. , a) - integral tau W - integral f W."""
    return _session(data, ctrl, q).big_f(t)


def neumann_psi1(data: ProblemData, t: float,
                 ctrl: SeriesControl = DEFAULT_CTRL,
                 q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """psi1(t) = F(t) + integral_0^t F(y) sum_{n>=1} omega(t-y, 2na) dy."""
    return _session(data, ctrl, q).psi1(t)


def recover_psi(data: ProblemData, t: float,
                ctrl: SeriesControl = DEFAULT_CTRL,
                q: QuadratureSpec = DEFAULT_QUAD) -> float:
    """psi(t) = 2 D^{alpha,beta1,gamma1,delta} psi1(t)."""
    return _session(data, ctrl, q).psi(t)


def psi_profile(data: ProblemData, ctrl: SeriesControl = DEFAULT_CTRL,
                q: QuadratureSpec = DEFAULT_QUAD) -> TimeFunction:
    """The tabulated psi as a TimeFunction (used by the composed solver)."""
    return _session(data, ctrl, q).psi_table()
