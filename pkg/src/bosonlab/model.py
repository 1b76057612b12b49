"""Model parameters, phases and the point-process identifiers."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from . import spectral
from .errors import BadFugacity, NotCondensed, UnderResolved
from .spectral import Grid


@dataclass(frozen=True)
class BECPhase:
    rho: float


@dataclass(frozen=True)
class NormalPhase:
    z: float


Phase = Union[BECPhase, NormalPhase]


# Point processes.  ``Shifted`` is the condensate component mu_{K, rho_eff};
# ``BEC`` is its convolution with the determinantal-style part ``Det``.


@dataclass(frozen=True)
class Det:
    pass


@dataclass(frozen=True)
class Shifted:
    rho_eff: float


@dataclass(frozen=True)
class BEC:
    rho: float


@dataclass(frozen=True)
class NormalDet:
    z: float

    def __post_init__(self) -> None:
        if not 0 < self.z < 1:
            raise BadFugacity(f"z = {self.z}; need 0 < z < 1")


MeasureId = Union[Det, Shifted, BEC, NormalDet]


def kernel_weights(measure: MeasureId, grid: Grid, beta: float) -> np.ndarray:
    """Momentum weights of the kernel driving ``measure``."""
    if isinstance(measure, NormalDet):
        return spectral.normal_weights(grid, beta, measure.z)
    return spectral.boson_weights(grid, beta)


def condensate_density(measure: MeasureId, grid: Grid, beta: float) -> float:
    """Density carried by the shifted component (zero when absent)."""
    if isinstance(measure, Shifted):
        return measure.rho_eff
    if isinstance(measure, BEC):
        excess = measure.rho - spectral.critical_density_grid(grid, beta)
        if not excess > 0:
            raise NotCondensed(
                f"rho = {measure.rho} does not exceed the grid critical density"
            )
        return excess
    return 0.0


def has_det_part(measure: MeasureId) -> bool:
    return not isinstance(measure, Shifted)


def measure_density(measure: MeasureId, grid: Grid, beta: float) -> float:
    """Mean particle density of ``measure`` on ``grid`` (grid-exact)."""
    if isinstance(measure, NormalDet):
        return spectral.normal_density_grid(grid, beta, measure.z)
    total = condensate_density(measure, grid, beta)
    if has_det_part(measure):
        total += spectral.critical_density_grid(grid, beta)
    return total


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the gas on a fixed grid.

    ``scaled(kappa)`` returns the parameters of the same gas viewed at length
    scale ``kappa``: dilating the box by ``kappa`` and mapping back with the
    unitary dilation is the same as keeping the grid and replacing ``beta``
    by ``beta / kappa^2`` while densities per reduced volume pick up a factor
    ``kappa^d``.
    """

    grid: Grid
    beta: float
    phase: Phase

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if isinstance(self.phase, NormalPhase):
            if not 0 < self.phase.z < 1:
                raise BadFugacity(f"z = {self.phase.z}; need 0 < z < 1")
        elif not self.phase.rho > self.rho_c_grid:
            raise NotCondensed(
                f"rho = {self.phase.rho:.6g} <= grid critical density {self.rho_c_grid:.6g}"
            )

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def is_bec(self) -> bool:
        return isinstance(self.phase, BECPhase)

    @cached_property
    def rho_c_grid(self) -> float:
        return spectral.critical_density_grid(self.grid, self.beta)

    @cached_property
    def rho_c_continuum(self) -> float:
        return spectral.critical_density_continuum(self.beta, self.grid.d)

    @cached_property
    def density(self) -> float:
        if self.is_bec:
            return self.phase.rho
        return spectral.normal_density_grid(self.grid, self.beta, self.phase.z)

    @property
    def condensate(self) -> float:
        return self.density - self.rho_c_grid if self.is_bec else 0.0

    def measure(self) -> MeasureId:
        return BEC(self.phase.rho) if self.is_bec else NormalDet(self.phase.z)

    def scaled(self, kappa: float) -> "ModelParams":
        """Reduced-coordinate parameters at scale ``kappa`` (see class docs)."""
        if kappa == 1:
            return self
        beta = self.beta / kappa**2
        if self.is_bec:
            phase: Phase = BECPhase(self.phase.rho * kappa**self.d)
        else:
            phase = self.phase
        return ModelParams(self.grid, beta, phase)

    def rho_c_at_scale(self, kappa: float) -> float:
        """Grid critical density of the kappa-dilated box, in physical units."""
        return spectral.critical_density_grid(self.grid, self.beta / kappa**2) / kappa**self.d

    def check_resolution(self, kappa: float) -> None:
        thermal = np.sqrt(self.beta) / kappa
        if thermal < self.grid.h * (1 - 1e-12):
            raise UnderResolved(
                f"thermal length sqrt(beta)/kappa = {thermal:.4g} < h = {self.grid.h:.4g}"
            )
