"""Closed-form generating functionals and moments on the grid.

Every functional is evaluated in log space.  With ``g`` the relevant weight
(``1 - e^{-f}``, ``e^f - 1`` or ``1 - e^{i lam f}``) and ``A`` the kernel
matrix on the support of ``f``:

* determinantal part: ``-log Det[1 + g A]`` (or ``-log Det[1 - S]``),
* condensate part:    ``-rho_eff <sqrt g, (1 + sqrt g A sqrt g)^{-1} sqrt g>``,

and the BEC process is their sum.  ``+inf`` is returned, with ``finite`` set
to False, exactly when the top eigenvalue of ``sqrt(e^f-1) A sqrt(e^f-1)``
reaches 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from . import spectral
from .errors import DeterminantSingular
from .model import MeasureId, ModelParams, condensate_density, has_det_part, kernel_weights, measure_density
from .profiles import TestFunction
from .spectral import EigenSystem, POLE_MARGIN


@dataclass(frozen=True)
class FunctionalValue:
    """Log of a generating functional.

    ``det_part`` and ``shift_part`` are the logs of the two factors; they sum
    to ``log_value``.  For divergent exponential moments all three are
    ``inf`` and ``finite`` is False.
    """

    log_value: Union[float, complex]
    finite: bool = True
    det_part: Union[float, complex] = 0.0
    shift_part: Union[float, complex] = 0.0

    @property
    def value(self) -> Union[float, complex]:
        if not self.finite:
            return math.inf
        return np.exp(self.log_value)


DIVERGENT = FunctionalValue(math.inf, False, math.inf, math.inf)


def support_kernel(measure: MeasureId, beta: float, f: TestFunction) -> spectral.OperatorMatrix:
    """Kernel matrix of ``measure`` gathered on the support of ``f``."""
    grid = f.grid
    table = spectral.kernel_table(grid, kernel_weights(measure, grid, beta))
    return spectral.gather(grid, table, f.support)


def _sandwich_system(A: spectral.OperatorMatrix, weight: np.ndarray) -> EigenSystem:
    S = spectral.sandwich(weight, A)
    return spectral.eigendecompose(S, weight=np.sqrt(weight[S.basis]))


def _combine(measure: MeasureId, det: float, shift: float) -> FunctionalValue:
    det = det if has_det_part(measure) else 0.0
    return FunctionalValue(det + shift, True, det, shift)


def laplace_functional(measure: MeasureId, beta: float, f: TestFunction) -> FunctionalValue:
    """log E[exp(-<f, xi>)]."""
    if f.is_zero():
        return FunctionalValue(0.0)
    grid = f.grid
    g = np.zeros(grid.n_cells)
    g[f.support] = -np.expm1(-f.on_support())
    es = _sandwich_system(support_kernel(measure, beta, f), g)
    rho_eff = condensate_density(measure, grid, beta)
    det = -spectral.log_det_1p(es)
    shift = 0.0
    if rho_eff:
        shift = -rho_eff * spectral.resolvent_form(
            np.sqrt(g[es.basis]), es, -1.0, grid.cell_volume
        )
    return _combine(measure, det, shift)


def exp_functional(measure: MeasureId, beta: float, f: TestFunction) -> FunctionalValue:
    """log E[exp(+<f, xi>)], or the divergent marker past the threshold."""
    if f.is_zero():
        return FunctionalValue(0.0)
    grid = f.grid
    a = np.zeros(grid.n_cells)
    a[f.support] = np.expm1(f.on_support())
    es = _sandwich_system(support_kernel(measure, beta, f), a)
    return _exp_from_system(measure, grid, beta, es, np.sqrt(a[es.basis]))


def _exp_from_system(measure, grid, beta, es: EigenSystem, root_weight: np.ndarray) -> FunctionalValue:
    if es.top >= 1 - POLE_MARGIN:
        return DIVERGENT
    det = -math.fsum(np.log1p(-es.eigenvalues))
    rho_eff = condensate_density(measure, grid, beta)
    shift = 0.0
    if rho_eff:
        shift = rho_eff * spectral.resolvent_form(root_weight, es, 1.0, grid.cell_volume)
    return _combine(measure, det, shift)


def exp_threshold(measure: MeasureId, beta: float, f: TestFunction) -> float:
    """Top eigenvalue of ``sqrt(e^f - 1) K sqrt(e^f - 1)``; finite iff < 1."""
    if f.is_zero():
        return 0.0
    a = np.zeros(f.grid.n_cells)
    a[f.support] = np.expm1(f.on_support())
    S = spectral.sandwich(a, support_kernel(measure, beta, f))
    return float(np.linalg.eigvalsh(S.entries)[-1])


def char_functional(measure: MeasureId, beta: float, f: TestFunction, lam: float) -> FunctionalValue:
    """log E[exp(i lam <f, xi>)] as a complex number.

    The operator ``(1 - e^{i lam f}) K`` is not Hermitian, so the determinant
    and the linear solve use a complex LU factorization of the support block.
    """
    if f.is_zero() or lam == 0:
        return FunctionalValue(0j)
    grid = f.grid
    A = support_kernel(measure, beta, f).entries
    g = -np.expm1(1j * lam * f.on_support())
    M = np.eye(len(g)) + g[:, None] * A
    sign, logabs = np.linalg.slogdet(M)
    if sign == 0 or not np.isfinite(logabs) or np.linalg.cond(M) > 1e12:
        raise DeterminantSingular(f"1 + (1 - e^(i lam f)) K is singular at lam = {lam}")
    det = -(logabs + 1j * np.angle(sign))
    rho_eff = condensate_density(measure, grid, beta)
    shift = 0j
    if rho_eff:
        shift = -rho_eff * grid.cell_volume * np.sum(np.linalg.solve(M, g))
    return _combine(measure, complex(det), complex(shift))


# ---------------------------------------------------------------------------
# Moments


def _autocorrelation(f: TestFunction) -> np.ndarray:
    F = np.fft.fftn(f.values)
    return np.fft.ifftn(np.abs(F) ** 2).real


def quadratic_form(f: TestFunction, weights: np.ndarray) -> float:
    """<f, K f> for the circulant operator with momentum ``weights``."""
    table = spectral.kernel_table(f.grid, weights)
    return f.grid.cell_volume * math.fsum((table * _autocorrelation(f)).ravel())


def trace_fkfk(f: TestFunction, weights: np.ndarray) -> float:
    """Tr[f K f K] via the displacement table and the autocorrelation of f."""
    table = spectral.kernel_table(f.grid, weights)
    return math.fsum((table**2 * _autocorrelation(f)).ravel())


def mean_variance(measure: MeasureId, beta: float, f: TestFunction) -> tuple[float, float]:
    """Mean and variance of <f, xi>, grid-exact.

    variance = rho int f^2 + [Tr fKfK] + 2 rho_eff <f, K f>, where the trace
    term is present for processes with a determinantal part.
    """
    if f.is_zero():
        return 0.0, 0.0
    grid = f.grid
    w = kernel_weights(measure, grid, beta)
    dens = measure_density(measure, grid, beta)
    rho_eff = condensate_density(measure, grid, beta)
    mean = dens * f.integral
    var = dens * f.l2_norm_sq()
    if has_det_part(measure):
        var += trace_fkfk(f, w)
    if rho_eff:
        var += 2 * rho_eff * quadratic_form(f, w)
    return mean, var


class ScaledVariance(NamedTuple):
    leading: float
    full: float

    @property
    def ratio(self) -> float:
        return self.full / self.leading if self.leading else math.nan


def green_form(f: TestFunction, beta: float) -> float:
    """<f, (-beta Laplacian)^{-1} f> on the grid (zero mode excluded)."""
    return quadratic_form(f, spectral.green_weights(f.grid, beta))


def scaled_variance(params: ModelParams, f: TestFunction, kappa: float) -> ScaledVariance:
    """Variance of <f(./kappa), xi>: leading asymptotic term and exact value.

    The exact value is computed in reduced coordinates (``params.scaled``).
    The leading term uses the infinite-volume critical density, so it is an
    exact power of ``kappa``.
    """
    if not params.is_bec:
        raise ValueError("scaled_variance is defined for the condensed phase")
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if f.is_zero():
        return ScaledVariance(0.0, 0.0)
    d = params.d
    condensate = params.density - params.rho_c_continuum
    leading = 2 * kappa ** (d + 2) * condensate * green_form(f, params.beta)
    reduced = params.scaled(kappa)
    _, full = mean_variance(reduced.measure(), reduced.beta, f)
    return ScaledVariance(leading, full)
