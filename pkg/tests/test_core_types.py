import math

import numpy as np
import pytest

from numerics.core_types import (
    Field,
    LedgerRow,
    Snapshot,
    SnapshotStore,
    integrate,
    make_grid,
    make_params,
    normalize_initial,
    unit_sphere_area,
)
from numerics.exceptions import (
    DataIntegrityError,
    DegenerateInitialDataError,
    GeometryError,
    ParameterDomainError,
)
from numerics.operators import lr_norm


def test_exponents_for_n3_p2():
    params = make_params(3, 2)
    assert params.p_star == pytest.approx(6.0)
    assert params.q == pytest.approx(5.0)
    assert params.q1p == pytest.approx(4.0)
    assert params.kappa == pytest.approx(params.q1p)


def test_kappa_matches_q1p_across_range():
    for n, p in [(3, 2.5), (4, 2.0), (5, 3.7), (10, 9.5)]:
        params = make_params(n, p)
        assert params.kappa == pytest.approx(params.q1p, rel=1e-12)
        assert params.q1p > 0.0


def test_p_outside_range_rejected():
    with pytest.raises(ParameterDomainError, match="p must satisfy 2 <= p < n=3, got p=1.5"):
        make_params(3, 1.5)
    with pytest.raises(ParameterDomainError):
        make_params(3, 3.0)
    with pytest.raises(ParameterDomainError):
        make_params(3, float("nan"))


def test_n_below_three_rejected():
    with pytest.raises(ParameterDomainError):
        make_params(2, 2.0)


def test_nonpositive_tolerance_rejected():
    with pytest.raises(ParameterDomainError):
        make_params(3, 2.0, newton_tol=0.0)


def test_weights_sum_to_domain_measure(grid_1d, grid_2d, grid_radial):
    assert grid_1d.measure() == pytest.approx(1.0, rel=1e-14)
    assert grid_2d.measure() == pytest.approx(1.0, rel=1e-14)
    assert grid_radial.measure() == pytest.approx(4.0 * math.pi / 3.0, rel=1e-12)


def test_unit_sphere_area():
    assert unit_sphere_area(3) == pytest.approx(4.0 * math.pi)
    assert unit_sphere_area(2) == pytest.approx(2.0 * math.pi)


def test_boundary_masks(grid_1d, grid_2d, grid_radial):
    assert grid_1d.boundary_mask().sum() == 2
    assert grid_2d.boundary_mask().sum() == 4 * 16
    radial = grid_radial.boundary_mask()
    assert radial.sum() == 1 and radial[-1] and not radial[0]


def test_grid_validation():
    with pytest.raises(GeometryError):
        make_grid("cartesian_1d", [1.0], [2])
    with pytest.raises(GeometryError):
        make_grid("cartesian_2d", [1.0], [11])
    with pytest.raises(GeometryError):
        make_grid("radial", [1.0], [11])
    with pytest.raises(GeometryError):
        make_grid("cartesian_1d", [1.0], [11], radial_dim=3)
    with pytest.raises(GeometryError):
        make_grid("hexagonal", [1.0], [11])


def test_field_shape_must_match(grid_1d):
    with pytest.raises(GeometryError):
        Field(grid_1d, np.zeros(7))


def test_normalize_initial_gives_unit_norm(params, grid_2d):
    x, y = grid_2d.mesh()
    raw = Field(grid_2d, 3.0 * np.sin(np.pi * x) * np.sin(np.pi * y))
    raw.values[grid_2d.boundary_mask()] = 0.0
    u0 = normalize_initial(raw, params)
    assert lr_norm(u0, params.q + 1.0) == pytest.approx(1.0, abs=1e-12)
    assert u0.solution_violations() == []


def test_normalize_initial_is_idempotent(params, u0_1d, u0_radial):
    for u0 in (u0_1d, u0_radial):
        again = normalize_initial(u0, params)
        np.testing.assert_allclose(again.values, u0.values, rtol=1e-14, atol=0.0)


def test_normalize_initial_rejects_degenerate_data(params, grid_1d):
    with pytest.raises(DegenerateInitialDataError):
        normalize_initial(Field(grid_1d, np.zeros(grid_1d.shape)), params)
    negative = -np.ones(grid_1d.shape)
    negative[0] = negative[-1] = 0.0
    with pytest.raises(DegenerateInitialDataError):
        normalize_initial(Field(grid_1d, negative), params)
    with pytest.raises(GeometryError):
        normalize_initial(Field(grid_1d, np.ones(grid_1d.shape)), params)


def test_solution_violations_lists_problems(grid_1d):
    values = np.linspace(-1.0, 1.0, grid_1d.shape[0])
    problems = Field(grid_1d, values).solution_violations()
    assert any("Dirichlet" in p for p in problems)
    assert any("negative" in p for p in problems)


def test_integrate_constant(grid_radial):
    assert integrate(grid_radial, np.ones(grid_radial.shape)) == pytest.approx(grid_radial.measure())


def _snapshot(grid, s, gamma):
    return Snapshot(s, Field(grid, np.zeros(grid.shape)), gamma, 0.0)


def test_store_rejects_time_going_backwards(params, grid_1d):
    store = SnapshotStore(params, grid_1d)
    store.append(_snapshot(grid_1d, 0.0, 1.0))
    store.append(_snapshot(grid_1d, 0.1, 0.9))
    with pytest.raises(DataIntegrityError):
        store.append(_snapshot(grid_1d, 0.1, 0.8))


def test_store_rejects_gamma_increase(params, grid_1d):
    store = SnapshotStore(params, grid_1d)
    store.append(_snapshot(grid_1d, 0.0, 1.0))
    with pytest.raises(DataIntegrityError):
        store.append(_snapshot(grid_1d, 0.1, 1.01))


def test_store_rejects_foreign_grid(params, grid_1d, grid_2d):
    store = SnapshotStore(params, grid_1d)
    with pytest.raises(GeometryError):
        store.append(_snapshot(grid_2d, 0.0, 1.0))


def test_store_ledger_and_extinction_mark(params, grid_1d):
    store = SnapshotStore(params, grid_1d)
    store.append(_snapshot(grid_1d, 0.0, 1.0))
    store.record(LedgerRow(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0))
    with pytest.raises(DataIntegrityError):
        store.record(LedgerRow(0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0))
    with pytest.raises(DataIntegrityError):
        store.mark_extinct(0.5, 1e-8)
    store.mark_extinct(0.0, 1e-8)
    assert store.extinction_time == 0.0
