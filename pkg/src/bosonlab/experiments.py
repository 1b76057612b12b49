"""Monte-Carlo limit-theorem harnesses and the normal-phase CGF suite."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import spectral
from .asymptotics import CGFCurve, grid_legendre
from .errors import NoSamples
from .functionals import exp_functional, exp_threshold, green_form, laplace_functional, mean_variance
from .model import ModelParams, NormalDet
from .profiles import TestFunction
from .sampler import RngSpec, sample_statistics
from .spectral import POLE_MARGIN

MIN_CLT_SAMPLES = 1000


def ks_statistic(values: np.ndarray) -> float:
    """Kolmogorov-Smirnov distance of the sample to the standard normal."""
    return float(stats.kstest(np.asarray(values, dtype=float), "norm").statistic)


def ks_critical_1pct(n: int) -> float:
    """Asymptotic 1% critical value of the one-sample KS statistic."""
    return 1.63 / math.sqrt(n)


@dataclass(frozen=True)
class CLTReport:
    kappa: float
    n_samples: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    ks_statistic: float
    normalizer: float
    exact_variance_ratio: float  # closed-form variance / normalizer^2

    @property
    def ks_critical(self) -> float:
        return ks_critical_1pct(self.n_samples)


def summarize(z: np.ndarray, kappa: float, normalizer: float, exact_ratio: float = math.nan) -> CLTReport:
    z = np.asarray(z, dtype=float)
    if z.size < 2:
        raise NoSamples("need at least 2 normalized values")
    return CLTReport(
        float(kappa),
        int(z.size),
        float(z.mean()),
        float(z.var(ddof=1)),
        float(stats.skew(z)),
        float(stats.kurtosis(z)),
        ks_statistic(z),
        float(normalizer),
        float(exact_ratio),
    )


def normal_density_at_scale(params: ModelParams, kappa: float) -> float:
    """Grid density of the normal phase in the kappa-dilated box, physical units."""
    grid = params.grid
    return spectral.normal_density_grid(grid, params.beta / kappa**2, params.phase.z) / kappa**params.d


def normal_square_diagonal_at_scale(params: ModelParams, kappa: float) -> float:
    """``(K_z^2)(0, 0)`` in the kappa-dilated box, physical units."""
    grid = params.grid
    w = spectral.normal_weights(grid, params.beta / kappa**2, params.phase.z)
    return math.fsum((w**2).ravel()) / grid.volume / kappa**params.d


def clt_normalizer(params: ModelParams, f: TestFunction, kappa: float) -> float:
    """Standard deviation scale of ``<f(./kappa), xi>`` in each phase.

    Condensed: ``sqrt(2 (rho - rho_c) <f, G f>) kappa^{(d+2)/2}``.
    Normal:    ``sqrt(K_z(0,0) + K_z^2(0,0)) ||f||_2 kappa^{d/2}``.
    Densities are the grid values of the kappa-dilated box.
    """
    d = params.d
    if params.is_bec:
        condensate = params.density - params.rho_c_at_scale(kappa)
        return math.sqrt(2 * condensate * green_form(f, params.beta)) * kappa ** ((d + 2) / 2)
    diag = normal_density_at_scale(params, kappa) + normal_square_diagonal_at_scale(params, kappa)
    return math.sqrt(diag * f.l2_norm_sq()) * kappa ** (d / 2)


def _scaled_pairings(params, f, kappa, n, rng, variant="shifted_field"):
    reduced = params.scaled(kappa)
    measure = reduced.measure()
    x, _ = sample_statistics(measure, reduced.beta, params.grid, [f], n, rng, variant)
    mean, var = mean_variance(measure, reduced.beta, f)
    return x[:, 0], mean, var


def clt_experiment(
    params: ModelParams, f: TestFunction, kappa: float, n_samples: int, rng: RngSpec
) -> CLTReport:
    """Draw ``<f(./kappa), xi>`` and normalize by the phase-appropriate scale."""
    if n_samples < MIN_CLT_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_CLT_SAMPLES}")
    if f.is_zero():
        raise ValueError("CLT needs a nonzero test function")
    params.check_resolution(kappa)
    x, mean, var = _scaled_pairings(params, f, kappa, n_samples, rng)
    norm = clt_normalizer(params, f, kappa)
    return summarize((x - mean) / norm, kappa, norm, var / norm**2)


@dataclass(frozen=True)
class LLNRow:
    kappa: float
    n_samples: int
    mean: float
    stderr: float
    target: float
    l2_error: float


def lln_experiment(
    params: ModelParams, f: TestFunction, kappas: Sequence[float], n_samples: int, rng: RngSpec
) -> list[LLNRow]:
    """Empirical L2 distance of ``kappa^{-d} <f(./kappa), xi>`` to ``rho int f``.

    Each scale uses its own independent batch of draws.
    """
    if n_samples < 2:
        raise NoSamples("need at least 2 samples")
    for kappa in kappas:
        params.check_resolution(kappa)
    target = params.density * f.integral
    rows = []
    for j, kappa in enumerate(kappas):
        if f.is_zero():
            rows.append(LLNRow(float(kappa), n_samples, 0.0, 0.0, 0.0, 0.0))
            continue
        x, _, _ = _scaled_pairings(params, f, kappa, n_samples, rng.batch(rng.family + j + 1))
        D = x / kappa**params.d
        err = math.sqrt(float(np.mean((D - target) ** 2)))
        rows.append(
            LLNRow(float(kappa), n_samples, float(D.mean()), float(D.std(ddof=1) / math.sqrt(n_samples)), target, err)
        )
    return rows


# ---------------------------------------------------------------------------
# Normal phase


def _require_normal(params: ModelParams) -> None:
    if params.is_bec:
        raise ValueError("normal-phase suite needs a normal phase (0 < z < 1)")


def normal_cgf_value(params: ModelParams, f: TestFunction, kappa: float, t: float) -> float:
    """``kappa^{-d} log E[exp(t <f(./kappa), xi>)]`` (no damping of f)."""
    _require_normal(params)
    if t == 0 or f.is_zero():
        return 0.0
    beta = params.beta / kappa**2
    measure = NormalDet(params.phase.z)
    g = f.scaled(abs(t))
    raw = exp_functional(measure, beta, g) if t > 0 else laplace_functional(measure, beta, g)
    if not raw.finite:
        return math.inf
    return raw.log_value / kappa**params.d


def normal_pole(params: ModelParams, f: TestFunction, kappa: float, rtol: float = 1e-10) -> float:
    measure = NormalDet(params.phase.z)
    beta = params.beta / kappa**2

    def below(t):
        return exp_threshold(measure, beta, f.scaled(t)) < 1 - POLE_MARGIN

    lo, hi = 0.0, 1.0
    while below(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if below(mid) else (lo, mid)
    return hi


def normal_phase_cgf(params: ModelParams, f: TestFunction, kappa: float, t_panel: Sequence[float]) -> CGFCurve:
    _require_normal(params)
    t = np.asarray(sorted(t_panel), dtype=float)
    vals = np.array([normal_cgf_value(params, f, kappa, ti) for ti in t])
    return CGFCurve(t, vals, normal_pole(params, f, kappa), float(kappa))


@dataclass(frozen=True, eq=False)
class NormalRateProxy:
    """Numeric Legendre transform of one finite-scale curve (not a limit)."""

    kappa: float
    s_values: np.ndarray
    I_values: np.ndarray


def normal_rate_proxy(curve: CGFCurve, s_values: Optional[Sequence[float]] = None, n: int = 21) -> NormalRateProxy:
    """``max_k (s t_k - value_k)`` over the finite tabulated points."""
    mask = curve.finite
    t, v = curve.t_values[mask], curve.values[mask]
    if s_values is None:
        slopes = np.diff(v) / np.diff(t)
        s_values = np.linspace(slopes.min(), slopes.max(), n)
    s = np.asarray(s_values, dtype=float)
    table = dict(zip(t.tolist(), v.tolist()))
    I = np.array([grid_legendre(lambda x: table[x], si, t, refine=0) for si in s])
    return NormalRateProxy(curve.kappa, s, I)
