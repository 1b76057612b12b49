import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from bosonlab import spectral
from bosonlab.errors import BadFugacity, BadResolution, DeterminantSingular, DimensionTooLow, NegativeWeight
from bosonlab.spectral import OperatorMatrix

# Independent oracles (computed once, frozen):
#   radial quadrature of (2 pi)^-3 int d^3p / (e^{p^2} - 1), mpmath at 30 digits
RHO_C_3D = 0.0586436213476444218728495407676
#   explicit triple loop over the k-lattice of Grid(3, 4, 8), beta = 1
RHO_C_GRID_348 = 0.010128348188083202
ZETA_3_2 = 2.61237534868548834334856756792  # mpmath.zeta(1.5)


def explicit_kernel_entry(grid, beta, xi, xj):
    """h^d L^-d sum_{p != 0} cos(p.(xi - xj)) / (e^{beta p^2} - 1), looping over k."""
    total = 0.0
    ks = range(-grid.N // 2, grid.N // 2)
    for k in itertools.product(ks, repeat=grid.d):
        if not any(k):
            continue
        p = 2 * math.pi * np.array(k) / grid.L
        total += math.cos(p @ (xi - xj)) / math.expm1(beta * p @ p)
    return grid.cell_volume * total / grid.volume


def op(entries):
    entries = np.asarray(entries, dtype=float)
    grid = spectral.make_grid(3, 4.0, 4)
    return OperatorMatrix(grid, np.arange(len(entries)), entries)


def random_psd(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    return X @ X.T / n


# -- grid ---------------------------------------------------------------------


def test_make_grid_spacing_and_cells():
    g = spectral.make_grid(3, 4.0, 8)
    assert g.h == 0.5
    assert g.n_cells == 512
    assert g.h * g.N == g.L
    assert g.momentum_sq.shape == g.shape


@pytest.mark.parametrize("args, exc", [((3, 4.0, 7), BadResolution), ((3, 4.0, 2), BadResolution), ((2, 4.0, 8), DimensionTooLow)])
def test_make_grid_rejects(args, exc):
    with pytest.raises(exc):
        spectral.make_grid(*args)


def test_momentum_lattice_matches_integer_lattice(small_grid):
    k = np.fft.fftfreq(small_grid.N, 1.0 / small_grid.N)
    assert set(k.astype(int)) == set(range(-4, 4))
    expected = (2 * np.pi / small_grid.L) ** 2 * (k[1] ** 2)
    assert small_grid.momentum_sq[1, 0, 0] == pytest.approx(expected, rel=1e-15)


# -- critical density ---------------------------------------------------------


def test_zeta_against_reference():
    assert spectral.zeta(1.5) == pytest.approx(ZETA_3_2, rel=1e-13)
    for s in (2.0, 2.5, 3.0, 4.5):
        assert spectral.zeta(s) == pytest.approx(special.zeta(s, 1), rel=1e-13)
    assert spectral.zeta(2.0) == pytest.approx(math.pi**2 / 6, rel=1e-14)


def test_critical_density_continuum_values():
    assert spectral.critical_density_continuum(1.0, 3) == pytest.approx(RHO_C_3D, rel=1e-12)
    assert spectral.critical_density_continuum(1.0, 4) == pytest.approx(1 / 96, rel=1e-13)


@given(st.floats(0.1, 50.0), st.integers(3, 6))
def test_critical_density_continuum_scaling(beta, d):
    ratio = spectral.critical_density_continuum(2 * beta, d) / spectral.critical_density_continuum(beta, d)
    assert ratio == pytest.approx(2 ** (-d / 2), rel=1e-12)


def test_critical_density_grid_lattice_sum(small_grid):
    assert spectral.critical_density_grid(small_grid, 1.0) == pytest.approx(RHO_C_GRID_348, rel=1e-13)


def test_critical_density_grid_decreasing_in_beta(small_grid):
    betas = [0.25, 0.5, 1.0, 2.0, 4.0]
    vals = [spectral.critical_density_grid(small_grid, b) for b in betas]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_critical_density_grid_refinement_is_resolution_converged():
    # At fixed L the lattice sum converges fast in N: the resolution error
    # shrinks while the remaining gap to the continuum value is a box-size
    # effect of the excluded zero mode.
    vals = [spectral.critical_density_grid(spectral.make_grid(3, 8.0, n), 1.0) for n in (8, 16, 32)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
    big_box = spectral.critical_density_grid(spectral.make_grid(3, 64.0, 128), 1.0)
    assert abs(big_box - RHO_C_3D) < abs(vals[2] - RHO_C_3D)


# -- kernels ------------------------------------------------------------------


def test_boson_kernel_entries_match_explicit_sum(small_grid):
    basis = np.array([0, 1, 9, 73, 200, 511])
    A = spectral.build_boson_kernel(small_grid, 1.0, basis)
    centers = np.stack([c.ravel() for c in small_grid.centers()], axis=1)
    for a, b in [(0, 0), (0, 1), (1, 3), (2, 5), (4, 5)]:
        ref = explicit_kernel_entry(small_grid, 1.0, centers[basis[a]], centers[basis[b]])
        assert A.entries[a, b] == pytest.approx(ref, rel=1e-10, abs=1e-16)


def test_boson_kernel_diagonal_and_symmetry(small_grid):
    A = spectral.build_boson_kernel(small_grid, 1.0)
    diag = small_grid.cell_volume * spectral.critical_density_grid(small_grid, 1.0)
    np.testing.assert_allclose(np.diag(A.entries), diag, rtol=1e-12)
    assert np.max(np.abs(A.entries - A.entries.T)) <= 1e-12 * np.max(np.abs(A.entries))
    lam = np.linalg.eigvalsh(A.entries)
    assert lam.min() >= -1e-10 * lam.max()


def test_boson_kernel_full_grid_spectrum_is_weights(small_grid):
    A = spectral.build_boson_kernel(small_grid, 0.7)
    lam = np.sort(np.linalg.eigvalsh(A.entries))
    w = np.sort(spectral.boson_weights(small_grid, 0.7).ravel())
    np.testing.assert_allclose(lam, w, atol=1e-12 * w.max())


def test_boson_kernel_trace_decreases_with_beta(small_grid):
    basis = np.arange(0, 512, 7)
    t1 = spectral.build_boson_kernel(small_grid, 1.0, basis).trace()
    t2 = spectral.build_boson_kernel(small_grid, 2.0, basis).trace()
    assert t2 < t1


def test_green_kernel_psd_and_dominates_scaled_boson(small_grid):
    G = spectral.build_green_kernel(small_grid, 1.0)
    lam = np.linalg.eigvalsh(G.entries)
    assert lam.min() >= -1e-10 * lam.max()
    for kappa in (2.0, 4.0):
        K = spectral.build_boson_kernel(small_grid, 1.0 / kappa**2)
        diff = np.linalg.eigvalsh((G - K * kappa**-2).entries)
        assert diff.min() >= -1e-10
        assert diff.max() <= 1 / (2 * kappa**2) + 1e-10


def test_green_diagonal_stable_under_joint_refinement():
    # L -> 2L, N -> 2N keeps h; the diagonal lattice sum of 1/p^2 changes only
    # by the finite-box correction, which is small compared with the value.
    vals = []
    for L, N in ((8.0, 16), (16.0, 32)):
        g = spectral.make_grid(3, L, N)
        vals.append(math.fsum(spectral.green_weights(g, 1.0).ravel()) / g.volume)
    assert vals[1] == pytest.approx(vals[0], rel=0.1)


def test_normal_kernel(small_grid):
    with pytest.raises(BadFugacity):
        spectral.build_normal_kernel(small_grid, 1.0, 1.0)
    with pytest.raises(BadFugacity):
        spectral.build_normal_kernel(small_grid, 1.0, 0.0)
    A = spectral.build_normal_kernel(small_grid, 1.0, 0.4, np.arange(20))
    rho = spectral.normal_density_grid(small_grid, 1.0, 0.4)
    np.testing.assert_allclose(np.diag(A.entries), small_grid.cell_volume * rho, rtol=1e-12)
    tiny = spectral.build_normal_kernel(small_grid, 1.0, 1e-12, np.arange(20))
    assert np.max(np.abs(tiny.entries)) < 1e-12


# -- sandwich and eigensystems ------------------------------------------------


def test_sandwich_zero_and_identity(small_grid):
    M = spectral.build_boson_kernel(small_grid, 1.0, np.arange(10))
    a = np.zeros(small_grid.n_cells)
    assert spectral.sandwich(a, M).size == 0
    a[:10] = 1.0
    S = spectral.sandwich(a, M)
    np.testing.assert_array_equal(S.entries, M.entries)
    a[3] = -0.1
    with pytest.raises(NegativeWeight):
        spectral.sandwich(a, M)


def test_sandwich_elementwise(small_grid):
    rng = np.random.default_rng(3)
    M = OperatorMatrix(small_grid, np.arange(4), random_psd(4, 1))
    a = np.zeros(small_grid.n_cells)
    a[:4] = rng.uniform(0.1, 2.0, 4)
    S = spectral.sandwich(a, M)
    for i in range(4):
        for j in range(4):
            assert S.entries[i, j] == pytest.approx(math.sqrt(a[i]) * M.entries[i, j] * math.sqrt(a[j]), rel=1e-14)


def test_eigendecompose_diag():
    es = spectral.eigendecompose(op(np.diag([1.0, 2.0])))
    np.testing.assert_array_equal(es.eigenvalues, [2.0, 1.0])
    np.testing.assert_allclose(np.abs(es.eigenvectors), [[0, 1], [1, 0]])


def test_eigendecompose_invariants(default_grid, default_box):
    G = spectral.build_green_kernel(default_grid, 1.0, default_box.support)
    S = spectral.sandwich(default_box.flat, G)
    root = np.sqrt(default_box.on_support())
    es = spectral.eigendecompose(S, weight=root)
    A = S.entries
    norm = np.abs(es.eigenvalues).max()
    resid = np.linalg.norm(A @ es.eigenvectors - es.eigenvectors * es.eigenvalues, axis=0)
    assert resid.max() <= 1e-10 * norm
    gram = es.eigenvectors.T @ es.eigenvectors
    assert np.max(np.abs(gram - np.eye(len(gram)))) <= 1e-10
    assert np.max(np.abs(es.reconstruct() - A)) <= 1e-10 * norm
    # Perron-Frobenius on a connected block: simple top eigenvalue, positive vector
    assert es.eigenvalues[0] > es.eigenvalues[1] * (1 + 1e-6)
    assert np.all(es.eigenvectors[:, 0] > 0)
    assert np.all(root @ es.eigenvectors >= 0)


def test_log_det_1p_examples():
    assert spectral.log_det_1p(op(np.diag([1.0, 2.0]))) == pytest.approx(math.log(6), rel=1e-15)
    assert spectral.log_det_1p(op(np.zeros((3, 3)))) == 0.0
    M = random_psd(5, 2)
    sign, ref = np.linalg.slogdet(np.eye(5) + M)
    assert sign > 0
    assert spectral.log_det_1p(op(M)) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(DeterminantSingular):
        spectral.log_det_1p(op(np.diag([-1.0, 0.5])))


def test_log_det2_examples():
    assert spectral.log_det2(op(np.diag([1.0]))) == pytest.approx(math.log(2) - 1, rel=1e-15)
    assert spectral.log_det2(op(np.zeros((2, 2)))) == 0.0


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_log_det2_bounded_by_hs_norm(seed):
    M = random_psd(5, seed)
    M = 0.1 * M / np.linalg.eigvalsh(M).max()
    assert abs(spectral.log_det2(op(M))) <= op(M).hs_norm_sq()


def test_resolvent_form_examples():
    M = op([[0.5]])
    v = np.array([1.0])
    assert spectral.resolvent_form(v, M, 1.0, 1.0) == pytest.approx(2.0, rel=1e-15)
    assert spectral.resolvent_form(v, M, 0.0, 0.3) == pytest.approx(0.3, rel=1e-15)
    assert spectral.resolvent_form(v, M, 2.0, 1.0) == math.inf


def test_resolvent_form_matches_linear_solve():
    M = random_psd(6, 5)
    v = np.arange(1.0, 7.0)
    t = 0.5 / np.linalg.eigvalsh(M).max()
    ref = 0.25 * v @ np.linalg.solve(np.eye(6) - t * M, v)
    assert spectral.resolvent_form(v, op(M), t, 0.25) == pytest.approx(ref, rel=1e-12)


def test_matrix_dumps(tmp_path, small_grid):
    M = spectral.build_boson_kernel(small_grid, 1.0, np.array([3, 5, 8]))
    M.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "i,j,value"
    assert len(lines) == 10
    i, j, v = lines[2].split(",")
    assert (int(i), int(j)) == (3, 5)
    assert float(v) == M.entries[0, 1]
    M.to_binary(tmp_path / "m.bin")
    back = np.fromfile(tmp_path / "m.bin", dtype="<f8").reshape(3, 3)
    np.testing.assert_array_equal(back, M.entries)
