"""Monte-Carlo sampling through the Cox representation.

A draw of the condensed-phase process is a Poisson process whose intensity is
``|c + eta(x)|^2``, with ``eta`` a centered complex Gaussian field of
covariance ``K`` and ``c^2`` the condensate density.  Conditional on the
intensity, each cell receives an independent Poisson count with mean
``intensity * h^d``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Optional, Sequence, Union

import numpy as np

from . import spectral
from .errors import BadIntensity, BadShift, NoSamples
from .model import BEC, MeasureId, Shifted, condensate_density, kernel_weights
from .profiles import TestFunction
from .spectral import Grid

Variant = Literal["shifted_field", "superposition"]

# Substream labels within one draw.  The superposition variant uses its own
# labels so that its draws are independent of the shifted-field variant.
FIELD, COX, JITTER, SPLIT_A, SPLIT_B, COX_A, COX_B = range(7)


@dataclass(frozen=True)
class RngSpec:
    """Seed plus stream; every random quantity derives from this pair.

    ``family`` separates independent batches that share a seed (for example
    one batch per scale in a sweep).
    """

    seed: int
    stream: int = 0
    family: int = 0

    def generator(self, sub: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.family, self.stream, sub))
        return np.random.Generator(np.random.PCG64(ss))

    def draw(self, index: int) -> "RngSpec":
        """Spec for the ``index``-th draw of a batch rooted at this seed."""
        return RngSpec(self.seed, index, self.family)

    def batch(self, family: int) -> "RngSpec":
        return RngSpec(self.seed, 0, family)


@dataclass(frozen=True, eq=False)
class ComplexField:
    grid: Grid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class IntensityField:
    grid: Grid
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Per-cell counts, with optional explicit positions (one row per point)."""

    grid: Grid
    counts: np.ndarray
    positions: Optional[np.ndarray] = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pair(self, f: TestFunction) -> float:
        return f.pair(self.counts)


@dataclass(frozen=True)
class MCReport:
    estimate: Union[float, complex]
    stderr: float
    n: int
    heavy_tail: bool = False


def _field_from_weights(grid: Grid, weights: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    zeta = gen.standard_normal(grid.shape) + 1j * gen.standard_normal(grid.shape)
    zeta *= math.sqrt(0.5)
    scale = grid.n_cells / grid.volume**0.5
    return scale * np.fft.ifftn(np.sqrt(weights) * zeta)


def sample_gaussian_field(
    grid: Grid, beta: float, rng: RngSpec, z: Optional[float] = None, sub: int = FIELD
) -> ComplexField:
    """Complex Gaussian field with covariance the boson kernel (or ``K_z``).

    ``eta(x) = L^{-d/2} sum_p sqrt(n(p)) zeta_p e^{ipx}``, synthesized with a
    single inverse FFT.  The zero mode is excluded for the boson weights.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    w = spectral.boson_weights(grid, beta) if z is None else spectral.normal_weights(grid, beta, z)
    return ComplexField(grid, _field_from_weights(grid, w, rng.generator(sub)))


def make_intensity(field: ComplexField, shift: float) -> IntensityField:
    """Pointwise ``|shift + eta|^2``."""
    if not (shift >= 0 and math.isfinite(shift)):
        raise BadShift(f"shift must be finite and nonnegative, got {shift}")
    return IntensityField(field.grid, np.abs(shift + field.values) ** 2)


def sample_cox(
    intensity: IntensityField, rng: RngSpec, positions: bool = False, sub: int = COX
) -> PointConfiguration:
    """Independent Poisson counts with mean ``intensity * h^d`` per cell."""
    lam = np.asarray(intensity.values, dtype=float)
    if not np.all(np.isfinite(lam)):
        raise BadIntensity("intensity has non-finite entries")
    if np.any(lam < 0):
        raise BadIntensity("intensity has negative entries")
    grid = intensity.grid
    counts = rng.generator(sub).poisson(lam * grid.cell_volume)
    pts = _jitter(grid, counts, rng.generator(JITTER)) if positions else None
    return PointConfiguration(grid, counts, pts)


def _jitter(grid: Grid, counts: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    cells = np.repeat(np.arange(grid.n_cells), counts.ravel())
    corner = np.stack(np.unravel_index(cells, grid.shape), axis=1) * grid.h
    return corner + grid.h * gen.random(corner.shape)


def _measure_driver(measure: MeasureId, grid: Grid, beta: float) -> tuple[np.ndarray, float]:
    if isinstance(measure, Shifted):
        raise ValueError("the shifted component alone has no Cox driver; sample BEC or Det")
    weights = kernel_weights(measure, grid, beta)
    shift = math.sqrt(condensate_density(measure, grid, beta)) if isinstance(measure, BEC) else 0.0
    return weights, shift


def sample_measure(
    measure: MeasureId,
    beta: float,
    grid: Grid,
    rng: RngSpec,
    variant: Variant = "shifted_field",
    positions: bool = False,
) -> PointConfiguration:
    """One configuration of ``measure``.

    ``shifted_field`` draws a single field and Cox step.  ``superposition``
    splits ``eta = a + ib`` into independent real fields of covariance
    ``K/2`` (real part of one complex draw, imaginary part of another) and
    superposes independent Cox draws with intensities ``(c + a)^2`` and
    ``b^2``.
    """
    weights, shift = _measure_driver(measure, grid, beta)
    return _draw(grid, weights, shift, rng, variant, positions)


def _draw(grid, weights, shift, rng: RngSpec, variant: Variant, positions: bool = False) -> PointConfiguration:
    if variant == "shifted_field":
        eta = _field_from_weights(grid, weights, rng.generator(FIELD))
        return sample_cox(IntensityField(grid, np.abs(shift + eta) ** 2), rng, positions)
    if variant == "superposition":
        a = _field_from_weights(grid, weights, rng.generator(SPLIT_A)).real
        b = _field_from_weights(grid, weights, rng.generator(SPLIT_B)).imag
        first = sample_cox(IntensityField(grid, (shift + a) ** 2), rng, sub=COX_A)
        second = sample_cox(IntensityField(grid, b**2), rng, sub=COX_B)
        pts = None
        if positions:
            pts = _jitter(grid, first.counts + second.counts, rng.generator(JITTER))
        return PointConfiguration(grid, first.counts + second.counts, pts)
    raise ValueError(f"unknown variant {variant!r}")


def sample_statistics(
    measure: MeasureId,
    beta: float,
    grid: Grid,
    tests: Sequence[TestFunction],
    n: int,
    rng: RngSpec,
    variant: Variant = "shifted_field",
) -> tuple[np.ndarray, np.ndarray]:
    """Pairings ``<f_k, xi_i>`` (shape ``(n, len(tests))``) and total counts.

    Draw ``i`` uses ``rng.draw(i)`` so any single draw can be reproduced in
    isolation.
    """
    weights, shift = _measure_driver(measure, grid, beta)
    F = np.stack([f.flat for f in tests], axis=1) if tests else np.zeros((grid.n_cells, 0))
    pairs = np.empty((n, F.shape[1]))
    totals = np.empty(n, dtype=np.int64)
    for i in range(n):
        xi = _draw(grid, weights, shift, rng.draw(i), variant)
        c = xi.counts.ravel()
        pairs[i] = c @ F
        totals[i] = c.sum()
    return pairs, totals


def sample_configurations(
    measure: MeasureId, beta: float, grid: Grid, n: int, rng: RngSpec, variant: Variant = "shifted_field"
) -> list[PointConfiguration]:
    return [sample_measure(measure, beta, grid, rng.draw(i), variant) for i in range(n)]


# ---------------------------------------------------------------------------
# Estimators


def _terms(pairings: np.ndarray, kind: str, lam: Optional[float]) -> np.ndarray:
    if kind == "laplace":
        return np.exp(-pairings)
    if kind == "exp":
        return np.exp(pairings)
    if kind == "char":
        if lam is None:
            raise ValueError("char estimator needs lam")
        return np.exp(1j * lam * pairings)
    raise ValueError(f"unknown functional kind {kind!r}")


def estimate_from_pairings(pairings: Iterable[float], kind: str, lam: Optional[float] = None) -> MCReport:
    """Sample mean and standard error of ``e^{-X}``, ``e^{i lam X}`` or ``e^{X}``."""
    x = np.asarray(list(pairings) if not isinstance(pairings, np.ndarray) else pairings, dtype=float)
    n = x.size
    if n < 2:
        raise NoSamples(f"need at least 2 samples, got {n}")
    terms = _terms(x, kind, lam)
    mean = terms.mean()
    dev = np.abs(terms - mean) ** 2
    stderr = math.sqrt(dev.sum() / (n - 1) / n)
    heavy = False
    if kind == "exp":
        top = max(1, n // 100)
        ordered = np.sort(terms)
        heavy = bool(ordered[-top:].sum() > 0.5 * ordered.sum())
    est = complex(mean) if kind == "char" else float(mean)
    return MCReport(est, stderr, n, heavy)


def estimate_functional(
    samples: Sequence[PointConfiguration], f: TestFunction, kind: str, lam: Optional[float] = None
) -> MCReport:
    if len(samples) == 0:
        raise NoSamples("empty sample set")
    return estimate_from_pairings(np.array([xi.pair(f) for xi in samples]), kind, lam)


def write_sample_dump(
    path: Union[str, Path],
    pairings: np.ndarray,
    totals: np.ndarray,
    counts: Optional[np.ndarray] = None,
) -> list[Path]:
    """CSV with ``draw_index,total_count,pair_count_f``; optional ``.npy`` sidecar of counts."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw_index", "total_count", "pair_count_f"])
        for i, (tot, val) in enumerate(zip(totals, pairings)):
            w.writerow([i, int(tot), repr(float(val))])
    written = [path]
    if counts is not None:
        side = path.with_suffix(".counts.npy")
        np.save(side, np.asarray(counts, dtype=np.int64))
        written.append(side)
    return written
