import csv
import math

import numpy as np
import pytest

from bosonlab import spectral
from bosonlab.errors import BadIntensity, BadShift, NoSamples, NotCondensed
from bosonlab.functionals import laplace_functional, mean_variance
from bosonlab.model import BEC, Det, NormalDet, Shifted
from bosonlab.profiles import TestFunction, ball_profile, box_profile, bump_profile
from bosonlab.sampler import (
    ComplexField,
    IntensityField,
    RngSpec,
    estimate_from_pairings,
    estimate_functional,
    make_intensity,
    sample_configurations,
    sample_cox,
    sample_gaussian_field,
    sample_measure,
    sample_statistics,
    write_sample_dump,
)

BETA = 1.0


def field_draws(grid, n, seed=1, z=None):
    return np.stack([sample_gaussian_field(grid, BETA, RngSpec(seed, i), z).values for i in range(n)])


# -- fields -------------------------------------------------------------------


def test_field_diagonal_and_covariance(grid8):
    eta = field_draws(grid8, 10_000).reshape(10_000, -1)
    rho_c = spectral.critical_density_grid(grid8, BETA)
    x = np.abs(eta[:, 100]) ** 2
    assert abs(x.mean() - rho_c) <= 4 * x.std(ddof=1) / math.sqrt(len(x))
    # fixed displacement: cells 100 and 101 (neighbors along the last axis)
    K = spectral.build_boson_kernel(grid8, BETA, np.array([100, 101])).entries / grid8.cell_volume
    prod = eta[:, 100] * np.conj(eta[:, 101])
    se = prod.real.std(ddof=1) / math.sqrt(len(prod))
    assert abs(prod.real.mean() - K[0, 1]) <= 4 * se
    assert abs(prod.imag.mean()) <= 4 * prod.imag.std(ddof=1) / math.sqrt(len(prod))
    pseudo = eta[:, 100] * eta[:, 101]
    assert abs(pseudo.real.mean()) <= 4 * pseudo.real.std(ddof=1) / math.sqrt(len(pseudo))


def test_field_is_exact_covariance_per_mode(grid8):
    # Averaged over cells the field energy is an exact mode sum; check the
    # synthesis scale without sampling noise by using unit mode amplitudes.
    w = spectral.boson_weights(grid8, BETA)
    eta = grid8.n_cells / grid8.volume**0.5 * np.fft.ifftn(np.sqrt(w))
    energy = grid8.cell_volume * np.sum(np.abs(eta) ** 2)
    assert energy == pytest.approx(np.sum(w), rel=1e-12)


def test_field_determinism(grid8):
    a = sample_gaussian_field(grid8, BETA, RngSpec(5, 3)).values
    b = sample_gaussian_field(grid8, BETA, RngSpec(5, 3)).values
    c = sample_gaussian_field(grid8, BETA, RngSpec(5, 4)).values
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


# -- intensity and Cox --------------------------------------------------------


def test_make_intensity(grid8):
    zero = ComplexField(grid8, np.zeros(grid8.shape, dtype=complex))
    assert np.all(make_intensity(zero, 0.0).values == 0)
    np.testing.assert_allclose(make_intensity(zero, 0.7).values, 0.49)
    with pytest.raises(BadShift):
        make_intensity(zero, -0.1)


def test_intensity_mean(grid8):
    c = 0.3
    rho_c = spectral.critical_density_grid(grid8, BETA)
    vals = np.array([make_intensity(sample_gaussian_field(grid8, BETA, RngSpec(2, i)), c).values[3, 4, 5] for i in range(10_000)])
    assert abs(vals.mean() - (c * c + rho_c)) <= 4 * vals.std(ddof=1) / 100


def test_sample_cox(grid8):
    zero = IntensityField(grid8, np.zeros(grid8.shape))
    assert sample_cox(zero, RngSpec(1)).total == 0
    lam = np.zeros(grid8.shape)
    lam[2:5, 2:5, 2:5] = 0.4  # 27 cells
    inten = IntensityField(grid8, lam)
    totals = np.array([sample_cox(inten, RngSpec(9, i)).total for i in range(10_000)])
    expected = 0.4 * 27 * grid8.cell_volume
    assert abs(totals.mean() - expected) <= 4 * math.sqrt(expected / len(totals))
    assert sample_cox(inten, RngSpec(3)).counts.tobytes() == sample_cox(inten, RngSpec(3)).counts.tobytes()
    bad = lam.copy()
    bad[0, 0, 0] = np.inf
    with pytest.raises(BadIntensity):
        sample_cox(IntensityField(grid8, bad), RngSpec(1))
    bad[0, 0, 0] = -1.0
    with pytest.raises(BadIntensity):
        sample_cox(IntensityField(grid8, bad), RngSpec(1))


def test_positions_lie_in_their_cells(grid8):
    xi = sample_measure(BEC(0.3), BETA, grid8, RngSpec(4), positions=True)
    assert xi.positions.shape == (xi.total, 3)
    cells = np.floor(xi.positions / grid8.h).astype(int)
    flat = np.ravel_multi_index(tuple(cells.T), grid8.shape)
    np.testing.assert_array_equal(np.bincount(flat, minlength=grid8.n_cells), xi.counts.ravel())


# -- measures -----------------------------------------------------------------


def test_sample_measure_errors(grid8):
    rho_c = spectral.critical_density_grid(grid8, BETA)
    with pytest.raises(NotCondensed):
        sample_measure(BEC(rho_c), BETA, grid8, RngSpec(1))
    with pytest.raises(ValueError):
        sample_measure(Shifted(0.1), BETA, grid8, RngSpec(1))
    with pytest.raises(ValueError):
        sample_measure(Det(), BETA, grid8, RngSpec(1), variant="bogus")


@pytest.mark.parametrize("measure", [Det(), BEC(0.15), NormalDet(0.5)], ids=["det", "bec", "normal"])
def test_sampler_matches_closed_form(grid8, profiles8, measure):
    n = 4000
    pairs, _ = sample_statistics(measure, BETA, grid8, profiles8, n, RngSpec(21))
    for k, f in enumerate(profiles8):
        x = pairs[:, k]
        mean, var = mean_variance(measure, BETA, f)
        assert abs(x.mean() - mean) <= 4 * x.std(ddof=1) / math.sqrt(n)
        # variance of the sample variance from the fourth central moment
        m4 = np.mean((x - x.mean()) ** 4)
        se_var = math.sqrt(max(m4 - x.var() ** 2, 0) / n)
        assert abs(x.var(ddof=1) - var) <= 4 * se_var
        est = estimate_from_pairings(x, "laplace")
        exact = math.exp(laplace_functional(measure, BETA, f).log_value)
        assert abs(est.estimate - exact) <= 3 * est.stderr


def test_variants_agree_in_law(grid8):
    tests = [
        box_profile(grid8, 1.5, 0.3),
        ball_profile(grid8, 2.0, 0.2),
        bump_profile(grid8, 2.5, 0.5),
        box_profile(grid8, 2.5, 0.1),
        ball_profile(grid8, 1.2, 0.6, center=[3.0, 4.0, 5.0]),
    ]
    n = 4000
    a, _ = sample_statistics(BEC(0.15), BETA, grid8, tests, n, RngSpec(8), "shifted_field")
    b, _ = sample_statistics(BEC(0.15), BETA, grid8, tests, n, RngSpec(8), "superposition")
    for k in range(len(tests)):
        ea, eb = estimate_from_pairings(a[:, k], "laplace"), estimate_from_pairings(b[:, k], "laplace")
        assert abs(ea.estimate - eb.estimate) <= 3 * math.hypot(ea.stderr, eb.stderr)


def test_variants_use_independent_draws(grid8):
    a = sample_measure(BEC(0.15), BETA, grid8, RngSpec(1), "shifted_field").counts
    b = sample_measure(BEC(0.15), BETA, grid8, RngSpec(1), "superposition").counts
    assert not np.array_equal(a, b)


def test_statistics_match_configurations(grid8, profiles8):
    confs = sample_configurations(Det(), BETA, grid8, 5, RngSpec(3))
    pairs, totals = sample_statistics(Det(), BETA, grid8, profiles8, 5, RngSpec(3))
    for i, xi in enumerate(confs):
        assert totals[i] == xi.total
        assert pairs[i, 0] == pytest.approx(xi.pair(profiles8[0]), rel=1e-14)


# -- estimators ---------------------------------------------------------------


def test_estimators(grid8):
    zero = TestFunction(grid8, np.zeros(grid8.shape))
    confs = sample_configurations(Det(), BETA, grid8, 20, RngSpec(2))
    rep = estimate_functional(confs, zero, "laplace")
    assert rep.estimate == 1.0 and rep.stderr == 0.0
    with pytest.raises(NoSamples):
        estimate_functional([], zero, "laplace")
    with pytest.raises(NoSamples):
        estimate_from_pairings([1.0], "laplace")
    x = np.random.default_rng(0).poisson(2.0, 500).astype(float)
    p, m = estimate_from_pairings(x, "char", 0.4), estimate_from_pairings(x, "char", -0.4)
    assert p.estimate == pytest.approx(m.estimate.conjugate(), abs=1e-15)


def test_heavy_tail_flag():
    x = np.zeros(1000)
    x[0] = 50.0
    assert estimate_from_pairings(x, "exp").heavy_tail
    assert not estimate_from_pairings(np.ones(1000), "exp").heavy_tail


def test_sample_dump(tmp_path):
    pairs = np.array([0.5, 1.25])
    totals = np.array([3, 4])
    counts = np.arange(8).reshape(2, 4)
    files = write_sample_dump(tmp_path / "s.csv", pairs, totals, counts)
    assert [p.name for p in files] == ["s.csv", "s.counts.npy"]
    rows = list(csv.reader(open(files[0])))
    assert rows == [["draw_index", "total_count", "pair_count_f"], ["0", "3", "0.5"], ["1", "4", "1.25"]]
    np.testing.assert_array_equal(np.load(files[1]), counts)
