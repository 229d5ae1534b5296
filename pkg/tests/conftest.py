"""
Shared fixtures: small grids, normalized initial data and one short prototype run
"""
import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT / "psflow"))
sys.path.insert(1, str(PROJECT_ROOT))

from numerics.core_types import Field, make_grid, make_params, normalize_initial
from numerics.initial_data import bump, truncated_talenti
from numerics.prototype_solver import PrototypeRun, run_to_extinction

COARSE_CONFIG = """
[params]
n = 3
p = 2

[grid]
mode = cartesian_1d
extent = 1.0
points = 21

[initial]
preset = bump

[solver]
ds_init = 1e-4
ds_min = 1e-6
ds_max = 2e-4
step_scale = 2e-3
energy_budget = 1e-2
snapshot_every = 1
dt = 2e-3
t_end = 0.05
record_every = 5
map_samples = 201

[diagnostics]
rho_cells = 0.25
levels = 0.05
source = direct

[output]
samples = 6
"""


@pytest.fixture
def params():
    return make_params(3, 2.0)


@pytest.fixture
def params_p3():
    return make_params(4, 3.0)


@pytest.fixture
def grid_1d():
    return make_grid("cartesian_1d", [1.0], [41])


@pytest.fixture
def grid_2d():
    return make_grid("cartesian_2d", [1.0, 1.0], [17, 17])


@pytest.fixture
def grid_radial():
    return make_grid("radial", [1.0], [41], radial_dim=3)


@pytest.fixture
def u0_1d(params, grid_1d):
    return normalize_initial(Field(grid_1d, bump(grid_1d)), params)


@pytest.fixture
def u0_radial(params, grid_radial):
    return normalize_initial(Field(grid_radial, truncated_talenti(grid_radial, params)), params)


@pytest.fixture(scope="session")
def coarse_config_text():
    return COARSE_CONFIG


@pytest.fixture(scope="session")
def prototype_store():
    """Prototype run to extinction on a 21-point 1D grid (n = 3, p = 2)"""
    params = make_params(3, 2.0)
    grid = make_grid("cartesian_1d", [1.0], [21])
    u0 = normalize_initial(Field(grid, bump(grid)), params)
    run = PrototypeRun(params=params, grid=grid, u0=u0, ds_init=1e-4, ds_min=1e-6, ds_max=1e-3,
                       step_scale=5e-2, energy_budget=1e-2, snapshot_every=5)
    return run_to_extinction(run)
