import numpy as np
import pytest

from numerics.core_types import Field, make_grid
from numerics.direct_flow import (
    DIRECT_COLUMNS,
    DirectRun,
    DirectState,
    cross_validate,
    direct_rows,
    joint_refinement_slope,
    lambda_monotonicity,
    run_direct,
    step_direct,
)
from numerics.exceptions import GeometryError, ParameterDomainError
from numerics.intrinsic_scaling import integrate_time_map
from numerics.operators import PLaplacianOp
from numerics.prototype_solver import ImplicitStepper


@pytest.fixture
def direct_run(params, u0_1d):
    run = DirectRun(params=params, grid=u0_1d.grid, u0=u0_1d, dt=2e-3, t_end=2e-2, record_every=2)
    run_direct(run)
    return run


def test_projection_keeps_the_constraint(params, direct_run):
    assert len(direct_run.series) == 6
    assert direct_run.series[-1].t == pytest.approx(2e-2)
    for state in direct_run.series:
        assert state.constraint_residual(params) <= 1e-12
        assert state.u.min() >= 0.0


def test_initial_lambda_is_gradient_energy(params, u0_1d, direct_run):
    op = PLaplacianOp(params, u0_1d.grid)
    first = direct_run.series[0]
    assert first.lambda_t == pytest.approx(op.grad_p_energy(u0_1d))
    assert first.s == 0.0 and first.gamma == 1.0


def test_prototype_clock_and_gamma_estimates(direct_run):
    s = np.array([state.s for state in direct_run.series])
    gamma = np.array([state.gamma for state in direct_run.series])
    assert np.all(np.diff(s) > 0.0)
    assert np.all(np.diff(gamma) < 0.0)
    assert np.all(s <= np.array([state.t for state in direct_run.series]) + 1e-15)


def test_lambda_monotonicity_report(direct_run):
    report = lambda_monotonicity(direct_run.series)
    assert isinstance(report["nonincreasing"], bool)
    assert report["max_relative_increase"] >= 0.0


def test_lambda_monotonicity_detects_increase(params, u0_1d):
    states = [DirectState(t, u0_1d, lam, 0.0, 1.0) for t, lam in [(0.0, 3.0), (0.1, 2.0), (0.2, 2.5)]]
    report = lambda_monotonicity(states)
    assert not report["nonincreasing"]
    assert report["max_relative_increase"] == pytest.approx(0.25)


def test_rows_follow_columns(params, direct_run):
    rows = direct_rows(direct_run.series, params)
    assert len(rows) == len(direct_run.series)
    assert all(len(row) == len(DIRECT_COLUMNS) for row in rows)


def test_source_variant_drifts_only_slightly(params, u0_1d):
    run = DirectRun(params=params, grid=u0_1d.grid, u0=u0_1d, dt=1e-3, t_end=1e-2, variant="source")
    series = run_direct(run)
    residuals = [state.constraint_residual(params) for state in series]
    assert residuals[0] <= 1e-12
    assert max(residuals) < 5e-2
    assert all(state.projection_factor == 1.0 for state in series[1:])


def test_step_direct_unknown_variant(params, u0_1d):
    stepper = ImplicitStepper(PLaplacianOp(params, u0_1d.grid))
    with pytest.raises(ParameterDomainError):
        step_direct(stepper, u0_1d, 1e-3, variant="explicit")


def test_run_argument_checks(params, u0_1d):
    with pytest.raises(ParameterDomainError):
        DirectRun(params=params, grid=u0_1d.grid, u0=u0_1d, dt=0.0, t_end=1.0)
    with pytest.raises(ParameterDomainError):
        DirectRun(params=params, grid=u0_1d.grid, u0=u0_1d, dt=1e-3, t_end=1.0, variant="other")
    with pytest.raises(ParameterDomainError):
        DirectRun(params=params, grid=u0_1d.grid, u0=Field(u0_1d.grid, 2.0 * u0_1d.values),
                  dt=1e-3, t_end=1.0)
    with pytest.raises(GeometryError):
        DirectRun(params=params, grid=make_grid("cartesian_1d", [1.0], [11]), u0=u0_1d,
                  dt=1e-3, t_end=1.0)


def test_cross_validation_against_rescaled_run(prototype_store):
    u0 = prototype_store.entries[0].field
    tm = integrate_time_map(prototype_store, t_end=2e-2, samples=201)
    run = DirectRun(params=prototype_store.params, grid=prototype_store.grid, u0=u0, dt=1e-3,
                    t_end=2e-2, record_every=5)
    run_direct(run)
    report = cross_validate(run, tm, prototype_store)
    assert len(report["samples"]) == len(run.series)
    assert report["samples"][0]["distance"] == pytest.approx(0.0, abs=1e-12)
    assert report["max_distance"] < 5e-2
    assert report["max_lambda_gap"] < 5e-2


def test_cross_validation_needs_the_same_grid(params, u0_1d, prototype_store):
    run = DirectRun(params=params, grid=u0_1d.grid, u0=u0_1d, dt=1e-3, t_end=1e-3)
    tm = integrate_time_map(prototype_store, t_end=1e-3, samples=11)
    with pytest.raises(GeometryError):
        cross_validate(run, tm, prototype_store)


def test_joint_refinement_slope():
    levels = [(0.1, {"max_distance": 1e-2}), (0.05, {"max_distance": 2.5e-3})]
    assert joint_refinement_slope(levels) == pytest.approx(2.0)
    assert joint_refinement_slope(levels[:1]) is None
