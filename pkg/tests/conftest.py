import pytest

from bosonlab import spectral
from bosonlab.model import BECPhase, ModelParams, NormalPhase
from bosonlab.profiles import ball_profile, box_profile, bump_profile


@pytest.fixture(scope="session")
def small_grid():
    return spectral.make_grid(3, 4.0, 8)


@pytest.fixture(scope="session")
def grid8():
    """8^3 cells on a box of side 8 (h = 1)."""
    return spectral.make_grid(3, 8.0, 8)


@pytest.fixture(scope="session")
def bec8(grid8):
    return ModelParams(grid8, 1.0, BECPhase(2 * spectral.critical_density_continuum(1.0, 3)))


@pytest.fixture(scope="session")
def profiles8(grid8):
    return [
        box_profile(grid8, 1.5, 0.3),
        ball_profile(grid8, 2.0, 0.2),
        bump_profile(grid8, 2.5, 0.5),
    ]


@pytest.fixture(scope="session")
def default_grid():
    return spectral.make_grid(3, 8.0, 32)


@pytest.fixture(scope="session")
def default_params(default_grid):
    rho = 2 * spectral.critical_density_continuum(1.0, 3)
    return ModelParams(default_grid, 1.0, BECPhase(rho))


@pytest.fixture(scope="session")
def default_box(default_grid):
    return box_profile(default_grid, 1.0)


@pytest.fixture(scope="session")
def sweep_params():
    """Fine grid used for the scale sweeps (resolves kappa up to 16)."""
    grid = spectral.make_grid(3, 4.0, 64)
    return ModelParams(grid, 1.0, BECPhase(2 * spectral.critical_density_continuum(1.0, 3)))


@pytest.fixture(scope="session")
def sweep_box(sweep_params):
    return box_profile(sweep_params.grid, 0.25)


@pytest.fixture(scope="session")
def normal_params(default_grid):
    return ModelParams(default_grid, 1.0, NormalPhase(0.5))
