"""Periodic-box discretization and the dense linear algebra built on it.

All kernels are translation invariant on the torus, so they are synthesized
once per displacement from their momentum-space weights with an inverse FFT
and then gathered into dense matrices over a subset of cells.

Matrix convention: ``A[i, j] = kernel(x_i, x_j) * h**d``.  With this choice a
matrix product is operator composition, the matrix trace is the operator
trace and matrix eigenvalues approximate operator eigenvalues.  Functions are
represented by their values at cell centers; the inner product carries the
cell volume explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    BadFugacity,
    BadResolution,
    DeterminantSingular,
    DimensionTooLow,
    EigenFailure,
    NegativeWeight,
)

# Spectra within this distance of a pole are reported as divergent.
POLE_MARGIN = 1e-9
# Relative size below which negative eigenvalues of PSD builds are clipped.
PSD_CLIP = 1e-10
_SINGULAR_MARGIN = 1e-12


# ---------------------------------------------------------------------------
# Grid


@dataclass(frozen=True)
class Grid:
    """Periodic box of side ``L`` in ``d`` dimensions with ``N`` cells per side.

    Cell ``i`` (multi-index) has center ``(i + 1/2) * h``.  The dual momentum
    lattice is ``p = 2 pi k / L`` with ``k`` in ``[-N/2, N/2)`` per axis, laid
    out in FFT order so that it is in bijection with the cells.
    """

    d: int
    L: float
    N: int

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def volume(self) -> float:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def n_cells(self) -> int:
        return self.N**self.d

    def axis_centers(self) -> np.ndarray:
        return (np.arange(self.N) + 0.5) * self.h

    def centers(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays of shape ``grid.shape``."""
        x = self.axis_centers()
        return np.meshgrid(*([x] * self.d), indexing="ij")

    @cached_property
    def momentum_sq(self) -> np.ndarray:
        """|p|^2 on the momentum lattice, FFT ordering, shape ``grid.shape``."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        out = np.zeros(self.shape)
        for axis in range(self.d):
            shape = [1] * self.d
            shape[axis] = self.N
            out = out + (k**2).reshape(shape)
        return out

    def all_cells(self) -> np.ndarray:
        return np.arange(self.n_cells)


def make_grid(d: int, L: float, N: int) -> Grid:
    if d < 3:
        raise DimensionTooLow(f"d = {d}; at least 3 dimensions are required")
    if N < 4 or N % 2:
        raise BadResolution(f"N = {N}; need an even number of cells >= 4")
    if not L > 0:
        raise ValueError(f"box side L must be positive, got {L}")
    return Grid(int(d), float(L), int(N))


# ---------------------------------------------------------------------------
# Critical density


_BERNOULLI_2K = (1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510)


def zeta(s: float, terms: int = 32) -> float:
    """Riemann zeta for real ``s > 1``.

    Direct partial sum up to ``terms - 1`` plus the Euler-Maclaurin tail.
    The first omitted correction is checked to be below 1e-12.
    """
    if not s > 1:
        raise ValueError("zeta(s) requires s > 1")
    M = terms
    n = np.arange(1, M, dtype=float)
    partial = math.fsum(n**-s)
    tail = M ** (1 - s) / (s - 1) + 0.5 * M**-s
    rising = s  # s (s+1) ... (s+2k-2)
    fact = 2.0  # (2k)!
    power = M ** (-s - 1)
    correction = 0.0
    for k, b in enumerate(_BERNOULLI_2K[:-1], start=1):
        correction += b / fact * rising * power
        rising *= (s + 2 * k - 1) * (s + 2 * k)
        fact *= (2 * k + 1) * (2 * k + 2)
        power /= M * M
    bound = abs(_BERNOULLI_2K[-1] / fact * rising * power)
    if bound > 1e-12:
        raise ArithmeticError(f"zeta tail bound {bound:.2e} too large; raise `terms`")
    return partial + tail + correction


def critical_density_continuum(beta: float, d: int) -> float:
    """zeta(d/2) / (4 pi beta)^(d/2)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if d < 3:
        raise DimensionTooLow(f"d = {d}")
    return zeta(d / 2) / (4 * math.pi * beta) ** (d / 2)


# ---------------------------------------------------------------------------
# Spectral weights (zero mode sits at index 0 in FFT order)


def boson_weights(grid: Grid, beta: float) -> np.ndarray:
    """1/(exp(beta p^2) - 1) with the zero mode removed."""
    x = beta * grid.momentum_sq
    w = np.zeros(grid.shape)
    nz = x > 0
    e = np.exp(-x[nz])
    w[nz] = e / (-np.expm1(-x[nz]))
    return w


def green_weights(grid: Grid, beta: float) -> np.ndarray:
    """1/(beta p^2) with the zero mode removed."""
    x = beta * grid.momentum_sq
    w = np.zeros(grid.shape)
    nz = x > 0
    w[nz] = 1.0 / x[nz]
    return w


def normal_weights(grid: Grid, beta: float, z: float) -> np.ndarray:
    """z e^{-beta p^2} / (1 - z e^{-beta p^2}), zero mode included."""
    if not 0 < z < 1:
        raise BadFugacity(f"z = {z}; need 0 < z < 1")
    q = z * np.exp(-beta * grid.momentum_sq)
    return q / (1.0 - q)


def critical_density_grid(grid: Grid, beta: float) -> float:
    """(1/L^d) sum_{p != 0} 1/(e^{beta p^2} - 1): the diagonal of the grid kernel."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    return math.fsum(boson_weights(grid, beta).ravel()) / grid.volume


def normal_density_grid(grid: Grid, beta: float, z: float) -> float:
    return math.fsum(normal_weights(grid, beta, z).ravel()) / grid.volume


def kernel_table(grid: Grid, weights: np.ndarray) -> np.ndarray:
    """Displacement table ``T[m] = h^d (1/L^d) sum_p w(p) e^{i p . x_m}``.

    Since ``h^d N^d = L^d`` this is exactly ``ifftn(w)``.  The table is
    symmetrized under ``m -> -m`` so gathered matrices are exactly symmetric.
    """
    table = np.fft.ifftn(weights).real
    flipped = np.roll(np.flip(table), 1, axis=tuple(range(grid.d)))
    return 0.5 * (table + flipped)


def apply_circulant(grid: Grid, weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply the full-grid operator with momentum weights to a field of values."""
    return np.fft.ifftn(weights * np.fft.fftn(values)).real


# ---------------------------------------------------------------------------
# Operator matrices


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense symmetric matrix over ``basis`` (flat cell indices of ``grid``)."""

    grid: Grid
    basis: np.ndarray
    entries: np.ndarray

    @property
    def size(self) -> int:
        return len(self.basis)

    def norm(self) -> float:
        """Operator (spectral) norm."""
        if self.size == 0:
            return 0.0
        return float(np.max(np.abs(np.linalg.eigvalsh(self.entries))))

    def trace(self) -> float:
        return float(np.trace(self.entries))

    def hs_norm_sq(self) -> float:
        return float(np.sum(self.entries**2))

    def restrict(self, cells: np.ndarray) -> "OperatorMatrix":
        pos = _positions(self.basis, cells)
        return OperatorMatrix(self.grid, np.asarray(cells), self.entries[np.ix_(pos, pos)])

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if not np.array_equal(self.basis, other.basis):
            raise ValueError("operator bases differ")
        return OperatorMatrix(self.grid, self.basis, self.entries - other.entries)

    def __mul__(self, scalar: float) -> "OperatorMatrix":
        return OperatorMatrix(self.grid, self.basis, scalar * self.entries)

    __rmul__ = __mul__

    def to_csv(self, path: Union[str, Path]) -> None:
        """Debug dump with columns ``i, j, value`` (cell indices)."""
        i, j = np.meshgrid(self.basis, self.basis, indexing="ij")
        with open(path, "w", newline="\n") as fh:
            fh.write("i,j,value\n")
            for a, b, v in zip(i.ravel(), j.ravel(), self.entries.ravel()):
                fh.write(f"{a},{b},{float(v)!r}\n")

    def to_binary(self, path: Union[str, Path]) -> None:
        """Row-major float64 dump of the entries."""
        np.ascontiguousarray(self.entries, dtype="<f8").tofile(path)


def _positions(basis: np.ndarray, cells: np.ndarray) -> np.ndarray:
    order = np.argsort(basis)
    idx = np.searchsorted(basis, cells, sorter=order)
    idx = np.clip(idx, 0, len(basis) - 1)
    pos = order[idx]
    if len(cells) and not np.array_equal(basis[pos], cells):
        raise ValueError("requested cells are not all in the operator basis")
    return pos


def gather(grid: Grid, table: np.ndarray, basis: Optional[np.ndarray] = None) -> OperatorMatrix:
    """Dense matrix ``A[a, b] = table[(m_a - m_b) mod N]`` over ``basis``."""
    basis = grid.all_cells() if basis is None else np.asarray(basis, dtype=np.int64)
    coords = np.unravel_index(basis, grid.shape)
    flat = np.zeros((len(basis), len(basis)), dtype=np.int64)
    for c in coords:
        c = c.astype(np.int32)
        flat = flat * grid.N + (c[:, None] - c[None, :]) % grid.N
    return OperatorMatrix(grid, basis, table.ravel()[flat])


def build_boson_kernel(grid: Grid, beta: float, basis: Optional[np.ndarray] = None) -> OperatorMatrix:
    if not beta > 0:
        raise ValueError("beta must be positive")
    return gather(grid, kernel_table(grid, boson_weights(grid, beta)), basis)


def build_green_kernel(grid: Grid, beta: float, basis: Optional[np.ndarray] = None) -> OperatorMatrix:
    if not beta > 0:
        raise ValueError("beta must be positive")
    return gather(grid, kernel_table(grid, green_weights(grid, beta)), basis)


def build_normal_kernel(
    grid: Grid, beta: float, z: float, basis: Optional[np.ndarray] = None
) -> OperatorMatrix:
    return gather(grid, kernel_table(grid, normal_weights(grid, beta, z)), basis)


def sandwich(weights: np.ndarray, M: OperatorMatrix) -> OperatorMatrix:
    """``sqrt(a_i) M_ij sqrt(a_j)`` restricted to the support of ``a``.

    ``weights`` is a full-grid array (any shape with ``n_cells`` entries).
    """
    a = np.asarray(weights, dtype=float).ravel()
    if np.any(a < 0):
        raise NegativeWeight("sandwich weights must be nonnegative")
    support = np.flatnonzero(a > 0)
    pos = _positions(M.basis, support)
    r = np.sqrt(a[support])
    block = M.entries[np.ix_(pos, pos)]
    return OperatorMatrix(M.grid, support, r[:, None] * block * r[None, :])


# ---------------------------------------------------------------------------
# Eigensystems and spectral functions


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Descending eigenvalues with matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    basis: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    n_clipped: int = 0

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0]) if len(self.eigenvalues) else 0.0

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def eigendecompose(
    M: OperatorMatrix, weight: Optional[np.ndarray] = None, psd: bool = True
) -> EigenSystem:
    """Full symmetric eigendecomposition, eigenvalues in descending order.

    ``weight`` (values over ``M.basis``) fixes signs so that
    ``<weight, phi_n> >= 0``; otherwise the first non-negligible component of
    each vector is made positive.  With ``psd`` set, negative round-off down to
    ``-PSD_CLIP * ||M||`` is clipped to zero.
    """
    A = 0.5 * (M.entries + M.entries.T)
    if A.shape[0] == 0:
        return EigenSystem(np.empty(0), np.empty((0, 0)), M.basis)
    try:
        vals, vecs = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK fault
        raise EigenFailure(str(exc)) from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    n_clipped = 0
    if psd:
        scale = max(abs(vals[0]), abs(vals[-1]))
        small = (vals < 0) & (vals >= -PSD_CLIP * scale)
        n_clipped = int(small.sum())
        vals[small] = 0.0
    if weight is not None:
        overlap = np.asarray(weight, dtype=float) @ vecs
        flip = overlap < 0
    else:
        tol = 1e-12 * np.max(np.abs(vecs), axis=0)
        first = np.argmax(np.abs(vecs) > tol, axis=0)
        flip = vecs[first, np.arange(vecs.shape[1])] < 0
    vecs[:, flip] *= -1
    return EigenSystem(vals, vecs, M.basis, n_clipped)


def _spectrum(M: Union[OperatorMatrix, EigenSystem]) -> np.ndarray:
    if isinstance(M, EigenSystem):
        return M.eigenvalues
    if M.size == 0:
        return np.empty(0)
    return np.linalg.eigvalsh(0.5 * (M.entries + M.entries.T))


def log_det_1p(M: Union[OperatorMatrix, EigenSystem]) -> float:
    """log Det[1 + M] = sum_n log(1 + lambda_n)."""
    lam = _spectrum(M)
    if lam.size and lam.min() <= -1 + _SINGULAR_MARGIN:
        raise DeterminantSingular(f"eigenvalue {lam.min():.3e} <= -1")
    return math.fsum(np.log1p(lam))


def log_det2(M: Union[OperatorMatrix, EigenSystem]) -> float:
    """log Det_2[1 + M] = log Det[1 + M] - Tr M."""
    lam = _spectrum(M)
    if lam.size and lam.min() <= -1 + _SINGULAR_MARGIN:
        raise DeterminantSingular(f"eigenvalue {lam.min():.3e} <= -1")
    return math.fsum(np.log1p(lam) - lam)


def resolvent_form(
    v: np.ndarray, M: Union[OperatorMatrix, EigenSystem], t: float, cell_volume: float
) -> float:
    """``<v, (1 - t M)^{-1} v>`` with ``cell_volume`` weighting, or ``inf``.

    ``inf`` is returned when ``t * lambda_n`` reaches ``1 - POLE_MARGIN`` for
    some eigenvalue.
    """
    es = M if isinstance(M, EigenSystem) else eigendecompose(M)
    if es.eigenvalues.size == 0:
        return 0.0
    scaled = t * es.eigenvalues
    if scaled.max() >= 1 - POLE_MARGIN:
        return math.inf
    coef = (np.asarray(v, dtype=float) @ es.eigenvectors) ** 2
    return cell_volume * math.fsum(coef / (1 - scaled))
