import numpy as np
import pytest

from numerics.core_types import Field
from numerics.exceptions import ParameterDomainError, TimeRangeError
from numerics.intrinsic_scaling import (
    boundedness_check,
    build_gamma_interpolant,
    gamma_regularity_check,
    integrate_time_map,
    interpolate_prototype,
    lambda_identity,
    rescale_solution,
    time_map_identity,
    weak_solution_contract,
)
from numerics.operators import PLaplacianOp
from numerics.prototype_solver import PrototypeRun, run_to_extinction


@pytest.fixture(scope="module")
def dense_store(prototype_store):
    """Same data as prototype_store, finer in s, with a snapshot after every step"""
    first = prototype_store.entries[0].field
    run = PrototypeRun(params=prototype_store.params, grid=prototype_store.grid, u0=first,
                       ds_init=1e-4, ds_min=1e-6, ds_max=2e-4, step_scale=2e-3,
                       energy_budget=1e-2, snapshot_every=1)
    return run_to_extinction(run)


@pytest.fixture(scope="module")
def time_map(dense_store):
    # t = S* carries s to about 0.63 S*, well before the steep end of gamma
    return integrate_time_map(dense_store, t_end=dense_store.extinction_time, samples=401)


@pytest.fixture(scope="module")
def states(dense_store, time_map):
    op = PLaplacianOp(dense_store.params, dense_store.grid)
    times = np.linspace(0.0, time_map.t_end, 11)
    return [rescale_solution(dense_store, time_map, float(t), op) for t in times]


def test_interpolant_endpoints(prototype_store):
    interp = build_gamma_interpolant(prototype_store)
    assert interp(0.0) == pytest.approx(prototype_store.entries[0].gamma)
    assert interp(prototype_store.extinction_time) == 0.0
    assert interp(2.0 * prototype_store.extinction_time) == 0.0
    values = interp(np.linspace(0.0, prototype_store.extinction_time, 50))
    assert np.all(np.diff(values) <= 0.0)


def test_interpolant_needs_extinction(params, u0_1d):
    run = PrototypeRun(params=params, grid=u0_1d.grid, u0=u0_1d, ds_init=1e-3, ds_min=1e-3,
                       ds_max=1e-3, s_stop=5e-3)
    store = run_to_extinction(run)
    with pytest.raises(TimeRangeError, match="last valid s"):
        build_gamma_interpolant(store)


def test_default_end_reaches_most_of_the_run(prototype_store):
    tm = integrate_time_map(prototype_store, samples=201)
    assert tm.s_collapsed[-1] == pytest.approx(0.99 * tm.S_star, rel=1e-6)
    assert tm.discrepancy <= 1e-6


def test_time_map_routes_agree(time_map):
    assert time_map.discrepancy <= 1e-6
    assert time_map.s[0] == 0.0
    assert np.all(np.diff(time_map.s_collapsed) > 0.0)
    assert time_map.s_collapsed[-1] < time_map.S_star


def test_time_map_identity(time_map):
    assert time_map_identity(time_map)["max_relative_error"] <= 1e-4


def test_time_map_rejects_points_outside(time_map):
    with pytest.raises(TimeRangeError):
        time_map.s_at(2.0 * time_map.t_end)
    with pytest.raises(TimeRangeError):
        time_map.s_at(-1.0)


def test_time_map_argument_checks(prototype_store):
    with pytest.raises(TimeRangeError):
        integrate_time_map(prototype_store, t_end=1e6, samples=11)
    with pytest.raises(ParameterDomainError):
        integrate_time_map(prototype_store, t_end=0.0)


def test_interpolate_prototype_hits_snapshots(prototype_store):
    entry = prototype_store.entries[2]
    field = interpolate_prototype(prototype_store, entry.s)
    np.testing.assert_array_equal(field.values, entry.field.values)
    with pytest.raises(TimeRangeError):
        interpolate_prototype(prototype_store, prototype_store.extinction_time * 1.5)


def test_rescaled_states_stay_on_the_sphere(states):
    assert all(st.constraint_residual <= 1e-12 for st in states)
    assert all(st.u.solution_violations() == [] for st in states)
    assert states[0].s == 0.0
    assert states[0].gamma_t == pytest.approx(1.0)


def test_lambda_identity(time_map, states):
    report = lambda_identity(time_map, states)
    assert len(report["samples"]) == len(states) - 2
    assert report["max_relative_error"] < 2e-2


def test_boundedness_holds(params, states):
    series = [(st.t, st.u, st.lambda_t) for st in states]
    assert boundedness_check(series, states[0].u, params)["passed"]


def test_boundedness_flags_growth(params, u0_1d):
    big = Field(u0_1d.grid, 10.0 * u0_1d.values)
    report = boundedness_check([(0.0, u0_1d, 0.0), (0.1, big, 0.0)], u0_1d, params)
    assert report["violations"] == [0.1]
    with pytest.raises(ParameterDomainError):
        boundedness_check([], u0_1d, params)


def test_gamma_regularity(dense_store, time_map):
    u0 = dense_store.entries[0].field
    report = gamma_regularity_check(time_map, u0, PLaplacianOp(dense_store.params, u0.grid))
    assert report["c0"] > 0.0
    assert report["passed"]


def test_weak_solution_contract(params, states):
    series = [(st.t, st.u, st.lambda_t) for st in states]
    report = weak_solution_contract(series, states[0].u, params)
    assert report["finite"]
    assert report["boundary_trace"] == 0.0
    assert report["constraint_residual"] <= 1e-12
    assert report["weak_form_residual"] < 0.2
