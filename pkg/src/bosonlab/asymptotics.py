"""Scaled cumulant generating functions, their limit and the rate function.

``P_kappa(t) = kappa^{-(d-2)} log E[exp(t kappa^{-2} <f(./kappa), xi>)]`` is
evaluated in reduced coordinates: the grid is kept fixed, the kernel is taken
at ``beta / kappa^2`` and the test function becomes ``t f / kappa^2``.

The limit ``P(t)`` comes from the eigenpairs ``(lam_n, phi_n)`` of
``sqrt(f) G sqrt(f)`` with ``G`` the inverse of ``-beta Laplacian``:

    P(t) = rho_c t int f + (rho - rho_c) t sum_n c_n / (1 - t lam_n),
    c_n  = h^d <sqrt f, phi_n>^2,

finite for ``t < 1/lam_1``.  The limit uses the infinite-volume critical
density, which is what the per-scale grid values converge to.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import spectral
from .errors import BosonLabError
from .functionals import FunctionalValue, exp_functional, exp_threshold, laplace_functional
from .model import ModelParams
from .profiles import TestFunction
from .spectral import POLE_MARGIN


class BracketFailure(BosonLabError, RuntimeError):
    """Root bracketing failed for a monotone derivative (internal fault)."""


# ---------------------------------------------------------------------------
# Tabulated curves


@dataclass(frozen=True, eq=False)
class CGFCurve:
    """``values[k]`` is the CGF at ``t_values[k]``; ``inf`` where divergent."""

    t_values: np.ndarray
    values: np.ndarray
    pole: float
    kappa: float = math.inf
    det_part: Optional[np.ndarray] = None
    shift_part: Optional[np.ndarray] = None

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def second_differences(self) -> np.ndarray:
        """Divided second differences over consecutive finite points."""
        t = self.t_values[self.finite]
        v = self.values[self.finite]
        if len(t) < 3:
            return np.empty(0)
        left = (v[1:-1] - v[:-2]) / (t[1:-1] - t[:-2])
        right = (v[2:] - v[1:-1]) / (t[2:] - t[1:-1])
        return 2 * (right - left) / (t[2:] - t[:-2])


@dataclass(frozen=True, eq=False)
class RateFunctionTable:
    s_values: np.ndarray
    I_values: np.ndarray
    t_star: np.ndarray
    s_star: float
    pole: float
    boundary: float  # I = inf strictly below this value

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.I_values)

    def second_differences(self) -> np.ndarray:
        s = self.s_values[self.finite]
        v = self.I_values[self.finite]
        if len(s) < 3:
            return np.empty(0)
        left = (v[1:-1] - v[:-2]) / (s[1:-1] - s[:-2])
        right = (v[2:] - v[1:-1]) / (s[2:] - s[1:-1])
        return 2 * (right - left) / (s[2:] - s[:-2])


# ---------------------------------------------------------------------------
# Finite scale


def _require_bec(params: ModelParams) -> None:
    if not params.is_bec:
        raise ValueError("the condensed-phase CGF needs a BEC phase")


def scaled_cgf_finite(params: ModelParams, f: TestFunction, kappa: float, t: float) -> FunctionalValue:
    """``P_kappa(t)``; ``finite`` is False past the divergence threshold."""
    _require_bec(params)
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    params.check_resolution(kappa)
    if t == 0 or f.is_zero():
        return FunctionalValue(0.0)
    reduced = params.scaled(kappa)
    g = f.scaled(abs(t) / kappa**2)
    if t > 0:
        raw = exp_functional(reduced.measure(), reduced.beta, g)
    else:
        raw = laplace_functional(reduced.measure(), reduced.beta, g)
    if not raw.finite:
        return raw
    norm = kappa ** -(params.d - 2)
    return FunctionalValue(norm * raw.log_value, True, norm * raw.det_part, norm * raw.shift_part)


def finite_scale_threshold(params: ModelParams, f: TestFunction, kappa: float, t: float) -> float:
    """Top eigenvalue of the sandwich controlling finiteness of ``P_kappa(t)``."""
    if t <= 0:
        return 0.0
    reduced = params.scaled(kappa)
    return exp_threshold(reduced.measure(), reduced.beta, f.scaled(t / kappa**2))


def finite_scale_pole(params: ModelParams, f: TestFunction, kappa: float, rtol: float = 1e-10) -> float:
    """Smallest ``t > 0`` at which ``P_kappa`` diverges, by bisection."""
    lo, hi = 0.0, 1.0
    while finite_scale_threshold(params, f, kappa, hi) < 1 - POLE_MARGIN:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if finite_scale_threshold(params, f, kappa, mid) < 1 - POLE_MARGIN:
            lo = mid
        else:
            hi = mid
    return hi


def finite_cgf_curve(
    params: ModelParams, f: TestFunction, kappa: float, t_values: Sequence[float], pole: Optional[float] = None
) -> CGFCurve:
    t = np.asarray(sorted(t_values), dtype=float)
    vals = [scaled_cgf_finite(params, f, kappa, ti) for ti in t]
    if pole is None:
        pole = finite_scale_pole(params, f, kappa)
    return CGFCurve(
        t,
        np.array([v.log_value for v in vals], dtype=float),
        pole,
        float(kappa),
        np.array([v.det_part for v in vals], dtype=float),
        np.array([v.shift_part for v in vals], dtype=float),
    )


# ---------------------------------------------------------------------------
# Limit


class LimitCGF:
    """Closed-form limit curve from the eigen-series of ``sqrt(f) G sqrt(f)``."""

    def __init__(self, params: ModelParams, f: TestFunction):
        _require_bec(params)
        if f.is_zero():
            raise ValueError("limit CGF needs a nonzero test function")
        self.params = params
        self.f = f
        grid = f.grid
        G = spectral.build_green_kernel(grid, params.beta, f.support)
        root = np.sqrt(f.on_support())
        self.system = spectral.eigendecompose(spectral.sandwich(f.flat, G), weight=root)
        self.lam = self.system.eigenvalues
        self.coef = grid.cell_volume * (root @ self.system.eigenvectors) ** 2
        self.integral = f.integral
        self.rho = params.density
        self.rho_c = params.rho_c_continuum
        self.condensate = self.rho - self.rho_c

    @property
    def top(self) -> float:
        return float(self.lam[0])

    @property
    def pole(self) -> float:
        return 1.0 / self.top

    def is_finite(self, t: float) -> bool:
        return t * self.top < 1 - POLE_MARGIN

    def components(self, t: float) -> tuple[float, float, float]:
        """``(P, P_det, P_shift)``; all ``inf`` past the pole."""
        if t == 0:
            return 0.0, 0.0, 0.0
        if not self.is_finite(t):
            return math.inf, math.inf, math.inf
        det = self.rho_c * t * self.integral
        shift = self.condensate * t * math.fsum(self.coef / (1 - t * self.lam))
        return det + shift, det, shift

    def __call__(self, t: float) -> float:
        return self.components(t)[0]

    def derivative(self, t: float) -> float:
        if not self.is_finite(t):
            return math.inf
        return self.rho_c * self.integral + self.condensate * math.fsum(self.coef / (1 - t * self.lam) ** 2)

    def second_derivative(self, t: float) -> float:
        if not self.is_finite(t):
            return math.inf
        return 2 * self.condensate * math.fsum(self.coef * self.lam / (1 - t * self.lam) ** 3)

    @property
    def mean(self) -> float:
        return self.derivative(0.0)

    @property
    def lower_slope(self) -> float:
        """``lim_{t -> -inf} P'(t)``: below it the rate function is infinite."""
        return self.rho_c * self.integral

    def sup_below(self) -> float:
        """``sup_t (lower_slope t - P(t))``, attained as ``t -> -inf``."""
        return self.condensate * math.fsum(self.coef / self.lam)

    def via_laplacian(self, t: float) -> float:
        """Same limit through ``rho t int f + (rho - rho_c) t^2 <f, (-beta Lap - t f)^{-1} f>``."""
        if not self.is_finite(t):
            return math.inf
        form = laplacian_resolvent_form(self.f, self.params.beta, t)
        return self.rho * t * self.integral + self.condensate * t * t * form

    def curve(self, t_values: Sequence[float]) -> CGFCurve:
        t = np.asarray(sorted(t_values), dtype=float)
        parts = np.array([self.components(ti) for ti in t], dtype=float).reshape(-1, 3)
        return CGFCurve(t, parts[:, 0], self.pole, math.inf, parts[:, 1], parts[:, 2])


def limit_cgf(params: ModelParams, f: TestFunction, t: float) -> tuple[float, float, float]:
    """``(P, P_det, P_shift)`` at ``t``."""
    if t == 0 or f.is_zero():
        return 0.0, 0.0, 0.0
    return LimitCGF(params, f).components(t)


def laplacian_resolvent_form(f: TestFunction, beta: float, t: float, rtol: float = 1e-13) -> float:
    """``<f, (Q(-beta Lap - t f)Q)^{-1} f>`` with ``Q`` removing constants.

    The Green operator excludes the zero mode, so the matching Laplacian
    problem lives on mean-zero functions.  Solved by conjugate gradients with
    FFT matvecs and a spectral preconditioner.
    """
    grid = f.grid
    fv = f.values
    k2 = beta * grid.momentum_sq
    precond = np.zeros(grid.shape)
    nz = k2 > 0
    precond[nz] = 1.0 / (k2[nz] + abs(t) * fv.mean())
    shape = grid.shape

    def project(v):
        return v - v.mean()

    def matvec(x):
        v = project(x.reshape(shape))
        hv = np.fft.ifftn(k2 * np.fft.fftn(v)).real
        return project(hv - t * fv * v).ravel()

    def apply_precond(x):
        v = project(x.reshape(shape))
        return np.fft.ifftn(precond * np.fft.fftn(v)).real.ravel()

    n = grid.n_cells
    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=apply_precond, dtype=float)
    rhs = project(fv).ravel()
    sol, info = cg(A, rhs, rtol=rtol, atol=0.0, maxiter=10 * n, M=M)
    if info != 0:
        raise BracketFailure(f"conjugate gradients did not converge (info = {info})")
    return grid.cell_volume * float(fv.ravel() @ project(sol.reshape(shape)).ravel())


# ---------------------------------------------------------------------------
# Rate function


def _bisect(fun, lo: float, hi: float, target: float) -> float:
    """Root of the increasing ``fun(t) = target`` in ``[lo, hi]``."""
    flo, fhi = fun(lo) - target, fun(hi) - target
    if flo > 0 or fhi < 0:
        raise BracketFailure(f"target {target} not bracketed by [{lo}, {hi}]")
    while True:
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-12 or mid in (lo, hi):
            return mid
        if fun(mid) < target:
            lo = mid
        else:
            hi = mid


def legendre_point(P: LimitCGF, s: float) -> tuple[float, float]:
    """``(I(s), t*)`` by bisection on the closed-form derivative."""
    if s < P.lower_slope - 1e-12:
        return math.inf, -math.inf
    if s <= P.lower_slope:
        return P.sup_below(), -math.inf
    mean = P.mean
    if s == mean:
        return 0.0, 0.0
    if s > mean:
        delta = 0.5 * P.pole
        while P.derivative(P.pole - delta) <= s:
            delta *= 0.5
            if delta < 1e-15 * P.pole:
                raise BracketFailure(f"P' stays below {s} up to the pole")
        lo, hi = 0.0, P.pole - delta
    else:
        T = 1.0
        while P.derivative(-T) >= s:
            T *= 4
            if T > 1e18:
                raise BracketFailure(f"P' stays above {s} as t -> -inf")
        lo, hi = -T, 0.0
    t = _bisect(P.derivative, lo, hi, s)
    return s * t - P(t), t


def rate_function(params: ModelParams, f: TestFunction, s_grid: Sequence[float]) -> RateFunctionTable:
    """Legendre transform of the limit CGF on ``s_grid``."""
    P = LimitCGF(params, f)
    s = np.asarray(s_grid, dtype=float)
    if np.any(np.diff(s) <= 0):
        raise ValueError("s_grid must be strictly ascending")
    out = [legendre_point(P, si) for si in s]
    return RateFunctionTable(
        s,
        np.array([o[0] for o in out]),
        np.array([o[1] for o in out]),
        P.mean,
        P.pole,
        P.lower_slope,
    )


def grid_legendre(P, s: float, t_values: np.ndarray, refine: int = 60) -> float:
    """``max_t (s t - P(t))`` on a grid followed by golden-section refinement.

    ``P`` is any callable returning ``inf`` outside its domain.  Used as an
    independent check on the bisection route and as the numeric transform
    of tabulated curves.
    """
    t_values = np.asarray(t_values, dtype=float)
    vals = np.array([s * t - P(t) for t in t_values])
    k = int(np.argmax(vals))
    best = vals[k]
    if refine and 0 < k < len(t_values) - 1:
        a, b = t_values[k - 1], t_values[k + 1]
        g = (math.sqrt(5) - 1) / 2
        c, d = b - g * (b - a), a + g * (b - a)
        fc, fd = s * c - P(c), s * d - P(d)
        for _ in range(refine):
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - g * (b - a)
                fc = s * c - P(c)
            else:
                a, c, fc = c, d, fd
                d = a + g * (b - a)
                fd = s * d - P(d)
        best = max(best, fc, fd)
    return float(best)


# ---------------------------------------------------------------------------
# Convergence study


@dataclass(frozen=True)
class ConvergenceRow:
    kappa: float
    t: float
    finite_value: float
    limit_value: float

    @property
    def error(self) -> float:
        return abs(self.finite_value - self.limit_value)


@dataclass(frozen=True, eq=False)
class ConvergenceTable:
    rows: list
    orders: dict  # t -> fitted decay order (nan for t = 0)

    def errors(self, t: float) -> np.ndarray:
        return np.array([r.error for r in self.rows if r.t == t])


def fitted_order(kappas: Sequence[float], values: Sequence[float]) -> float:
    """``-slope`` of the least-squares line through ``(log kappa, log value)``."""
    k = np.log(np.asarray(kappas, dtype=float))
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0):
        return math.nan
    slope = np.polyfit(k, np.log(v), 1)[0]
    return float(-slope)


def cgf_convergence_study(
    params: ModelParams, f: TestFunction, kappas: Sequence[float], t_panel: Sequence[float]
) -> ConvergenceTable:
    P = LimitCGF(params, f)
    for t in t_panel:
        if not P.is_finite(t):
            raise ValueError(f"t = {t} lies outside the domain of the limit CGF")
    rows = []
    for kappa in kappas:
        params.check_resolution(kappa)
        for t in t_panel:
            v = scaled_cgf_finite(params, f, kappa, t)
            rows.append(ConvergenceRow(float(kappa), float(t), float(v.log_value), P(t)))
    orders = {}
    for t in t_panel:
        errs = [r.error for r in rows if r.t == t]
        orders[float(t)] = math.nan if t == 0 else fitted_order(kappas, errs)
    return ConvergenceTable(rows, orders)


def volume_speed_cgf(params: ModelParams, f: TestFunction, kappa: float, t: float) -> float:
    """``kappa^{-d} log E[exp(t kappa^{-2} <f(./kappa), xi>)] = kappa^{-2} P_kappa(t)``.

    The condensed phase fluctuates at speed ``kappa^{d-2}``; at the volume
    speed of the normal phase this quantity vanishes as ``kappa`` grows.
    """
    v = scaled_cgf_finite(params, f, kappa, t)
    return v.log_value / kappa**2 if v.finite else math.inf
