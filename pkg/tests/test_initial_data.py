import numpy as np
import pytest

from numerics.core_types import normalize_initial
from numerics.exceptions import ParameterDomainError
from numerics.initial_data import bump, make_initial, plateau, truncated_talenti


@pytest.mark.parametrize("grid_name", ["grid_1d", "grid_2d", "grid_radial"])
@pytest.mark.parametrize("preset", ["bump", "truncated_talenti", "plateau"])
def test_presets_are_admissible(request, params, grid_name, preset):
    grid = request.getfixturevalue(grid_name)
    raw = make_initial(preset, grid, params)
    assert raw.solution_violations() == []
    assert raw.max() > 0.0
    normalize_initial(raw, params)


def test_bump_peaks_in_the_middle(grid_1d):
    values = bump(grid_1d)
    assert np.argmax(values) == grid_1d.shape[0] // 2
    assert values.max() == pytest.approx(1.0)


def test_radial_bump_peaks_at_origin(grid_radial):
    values = bump(grid_radial)
    assert values[0] == pytest.approx(1.0)
    assert values[-1] == 0.0


def test_truncated_talenti_is_shifted_profile(params, grid_radial):
    values = truncated_talenti(grid_radial, params)
    assert values[-1] == 0.0
    assert np.all(np.diff(values) <= 0.0)


def test_plateau_levels(grid_1d):
    values = plateau(grid_1d, width=0.2, level=2.0)
    assert values[grid_1d.shape[0] // 2] == pytest.approx(2.0)
    assert values[4] == pytest.approx(1.0)
    with pytest.raises(ParameterDomainError):
        plateau(grid_1d, width=0.0)


def test_unknown_preset(params, grid_1d):
    with pytest.raises(ParameterDomainError):
        make_initial("gaussian", grid_1d, params)
