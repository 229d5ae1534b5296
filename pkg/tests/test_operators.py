import numpy as np
import pytest

from numerics.core_types import Field, make_grid, make_params
from numerics.exceptions import GeometryError, ParameterDomainError
from numerics.operators import (
    PLaplacianOp,
    flux_monotonicity_probe,
    flux_monotonicity_sweep,
    lr_norm,
)


def _interior(grid, values):
    return values[grid.interior_mask()]


def test_p2_is_exact_on_quadratics_1d(params, grid_1d):
    (x,) = grid_1d.mesh()
    lap = PLaplacianOp(params, grid_1d).apply(Field(grid_1d, x * (1.0 - x)))
    np.testing.assert_allclose(_interior(grid_1d, lap.values), -2.0, rtol=1e-9)
    assert np.all(lap.values[grid_1d.boundary_mask()] == 0.0)


def test_p2_is_five_point_laplacian_2d(params, grid_2d):
    x, y = grid_2d.mesh()
    lap = PLaplacianOp(params, grid_2d).apply(Field(grid_2d, x * (1.0 - x) + y * (1.0 - y)))
    np.testing.assert_allclose(_interior(grid_2d, lap.values), -4.0, rtol=1e-9)


def test_radial_p2_exact_on_quadratic(params, grid_radial):
    (r,) = grid_radial.mesh()
    lap = PLaplacianOp(params, grid_radial).apply(Field(grid_radial, 1.0 - r ** 2))
    np.testing.assert_allclose(_interior(grid_radial, lap.values), -6.0, rtol=1e-9)


def test_p2_sine_accuracy_improves_with_refinement(params):
    errors = []
    for points in (21, 41):
        grid = make_grid("cartesian_1d", [1.0], [points])
        (x,) = grid.mesh()
        lap = PLaplacianOp(params, grid).apply(Field(grid, np.sin(np.pi * x)))
        exact = -np.pi ** 2 * np.sin(np.pi * x)
        errors.append(np.max(np.abs(_interior(grid, lap.values - exact))))
    assert errors[1] < errors[0] / 3.0


def test_p_laplacian_1d_matches_closed_form():
    params = make_params(3, 2.5)
    grid = make_grid("cartesian_1d", [1.0], [401])
    (x,) = grid.mesh()
    f = Field(grid, x * (1.0 - x))
    lap = PLaplacianOp(params, grid).apply(f)
    # (|f'|^(p-2) f')' with f' = 1 - 2x
    slope = 1.0 - 2.0 * x
    exact = -2.0 * (params.p - 1.0) * np.abs(slope) ** (params.p - 2.0)
    mask = grid.interior_mask() & (np.abs(slope) > 0.1)
    np.testing.assert_allclose(lap.values[mask], exact[mask], rtol=1e-2)


@pytest.mark.parametrize("grid_name", ["grid_1d", "grid_2d", "grid_radial"])
def test_summation_by_parts(request, grid_name):
    grid = request.getfixturevalue(grid_name)
    params = make_params(3, 2.5)
    op = PLaplacianOp(params, grid)
    rng = np.random.default_rng(7)
    f = Field(grid, rng.uniform(0.0, 1.0, grid.shape))
    g_values = rng.uniform(-1.0, 1.0, grid.shape)
    g_values[grid.boundary_mask()] = 0.0
    g = Field(grid, g_values)
    lhs = op.pairing(op.apply(f), g)
    rhs = -op.flux_pairing(f, g)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_grad_energy_is_pairing_with_itself(grid_2d):
    params = make_params(3, 2.5)
    op = PLaplacianOp(params, grid_2d)
    x, y = grid_2d.mesh()
    f = Field(grid_2d, np.sin(np.pi * x) * np.sin(np.pi * y))
    assert op.grad_p_energy(f) == pytest.approx(op.flux_pairing(f, f), rel=1e-12)
    assert op.grad_p_energy(f) == pytest.approx(-op.pairing(op.apply(f), f), rel=1e-10)


def test_radial_dimension_must_match_n(grid_radial):
    with pytest.raises(GeometryError):
        PLaplacianOp(make_params(4, 2.0), grid_radial)


def test_field_from_other_grid_rejected(params, grid_1d):
    op = PLaplacianOp(params, grid_1d)
    other = make_grid("cartesian_1d", [1.0], [11])
    with pytest.raises(GeometryError):
        op.apply(Field(other, np.zeros(11)))


def test_lr_norm(grid_1d):
    ones = Field(grid_1d, np.ones(grid_1d.shape))
    assert lr_norm(ones, 6.0) == pytest.approx(1.0)
    with pytest.raises(ParameterDomainError):
        lr_norm(ones, 0.5)


def test_probe_antipodal_equality():
    xi = np.array([1.0, 2.0, -0.5])
    lhs, bound = flux_monotonicity_probe(xi, -xi, 3.0)
    assert lhs == pytest.approx(bound, rel=1e-14)


def test_probe_p2_equality():
    lhs, bound = flux_monotonicity_probe(np.array([0.3, -1.0]), np.array([2.0, 0.7]), 2.0)
    assert lhs == pytest.approx(bound, rel=1e-15)


def test_probe_rejects_small_p():
    with pytest.raises(ParameterDomainError):
        flux_monotonicity_probe(np.ones(2), np.zeros(2), 1.5)


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0])
def test_sweep_finds_no_violations(p):
    report = flux_monotonicity_sweep(np.random.default_rng(0), p, pairs=20_000)
    assert report["violations"] == 0
    if p == 2.0:
        assert report["max_relative_gap"] == 0.0


@pytest.mark.parametrize("grid_name", ["grid_2d", "grid_radial"])
@pytest.mark.parametrize("p", [2.0, 2.5, 2.9])
def test_negative_p_laplacian_is_monotone(request, grid_name, p):
    grid = request.getfixturevalue(grid_name)
    op = PLaplacianOp(make_params(3, p), grid)
    rng = np.random.default_rng(11)
    boundary = grid.boundary_mask()
    for _ in range(25):
        a_values = rng.uniform(-1.0, 1.0, grid.shape)
        b_values = rng.uniform(-1.0, 1.0, grid.shape)
        a_values[boundary] = b_values[boundary] = 0.0
        a, b = Field(grid, a_values), Field(grid, b_values)
        # <(-Delta_p a) - (-Delta_p b), a - b>_h
        gap = Field(grid, op.apply(b).values - op.apply(a).values)
        pairing = op.pairing(gap, Field(grid, a_values - b_values))
        scale = op.grad_p_energy(a) + op.grad_p_energy(b)
        assert pairing >= -1e-12 * scale
