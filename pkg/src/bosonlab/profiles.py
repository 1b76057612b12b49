"""Nonnegative compactly supported test functions on a grid."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BadTestFunction
from .spectral import Grid


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Cell values of a bounded ``f >= 0`` whose support stays off the seam.

    "Off the seam" means no support cell lies in the first or last layer of
    any axis, so the support never wraps around the periodic box.
    """

    __test__ = False  # not a pytest class

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise BadTestFunction("test function has non-finite values")
        if np.any(v < 0):
            raise BadTestFunction("test function must be nonnegative")
        for axis in range(self.grid.d):
            edge = np.take(v, [0, self.grid.N - 1], axis=axis)
            if np.any(edge > 0):
                raise BadTestFunction("support touches the periodic seam")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.flat > 0)

    @property
    def sup_norm(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    @property
    def integral(self) -> float:
        return self.grid.cell_volume * math.fsum(self.flat)

    def l2_norm_sq(self) -> float:
        return self.grid.cell_volume * math.fsum(self.flat**2)

    def on_support(self) -> np.ndarray:
        return self.flat[self.support]

    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def map(self, fn) -> "TestFunction":
        return TestFunction(self.grid, fn(self.values))

    def scaled(self, factor: float) -> "TestFunction":
        return TestFunction(self.grid, factor * self.values)

    def pair(self, counts: np.ndarray) -> float:
        """<f, xi> for a configuration given as per-cell counts."""
        return float(self.flat @ np.asarray(counts).ravel())


def scaled_test_function(f: TestFunction, kappa: float, sign: int) -> TestFunction:
    """``+-kappa^2 (exp(+-f/kappa^2) - 1)``; the support is preserved exactly."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    k2 = kappa * kappa
    return TestFunction(f.grid, sign * k2 * np.expm1(sign * f.values / k2))


def _offsets(grid: Grid, center: Optional[Sequence[float]]) -> list[np.ndarray]:
    c = [grid.L / 2] * grid.d if center is None else list(center)
    if len(c) != grid.d:
        raise BadTestFunction(f"center has {len(c)} coordinates, grid has d = {grid.d}")
    return [x - ci for x, ci in zip(grid.centers(), c)]


def box_profile(grid: Grid, halfwidth: float, height: float = 1.0, center=None) -> TestFunction:
    """``height`` on the cube ``|x - center|_inf <= halfwidth``."""
    dx = _offsets(grid, center)
    inside = np.all([np.abs(x) <= halfwidth for x in dx], axis=0)
    return TestFunction(grid, height * inside.astype(float))


def ball_profile(grid: Grid, radius: float, height: float = 1.0, center=None) -> TestFunction:
    r2 = sum(x**2 for x in _offsets(grid, center))
    return TestFunction(grid, height * (r2 <= radius**2).astype(float))


def bump_profile(grid: Grid, radius: float, height: float = 1.0, center=None) -> TestFunction:
    """Smooth bump ``height * exp(1 - 1/(1 - r^2/R^2))`` for ``r < R``."""
    u = sum(x**2 for x in _offsets(grid, center)) / radius**2
    vals = np.zeros(grid.shape)
    inside = u < 1
    vals[inside] = height * np.exp(1.0 - 1.0 / (1.0 - u[inside]))
    return TestFunction(grid, vals)


PROFILES = {"box": box_profile, "ball": ball_profile, "bump": bump_profile}


def make_profile(grid: Grid, shape: str, size: float, height: float = 1.0, center=None) -> TestFunction:
    try:
        build = PROFILES[shape]
    except KeyError:
        raise BadTestFunction(f"unknown profile shape {shape!r}") from None
    return build(grid, size, height, center)
