import numpy as np
import pytest

import config
from numerics.core_types import Field, make_grid
from numerics.exceptions import GeometryError, InvariantFailureError, ParameterDomainError, TimeRangeError
from numerics.positivity import (
    alpha_lower_bound,
    check_chain,
    make_subdomain,
    positivity_floor_track,
    positivity_report,
    resolve_M,
    stretched_time,
    sublevel_measure,
    unstretched_time,
    volume_constraint_alpha,
)
from pipeline.run_config import load_config


def test_default_margin_is_sixteen_radii(grid_1d):
    region = make_subdomain(grid_1d, rho_cells=0.25)
    assert region.margin_cells == 4
    assert region.mask().sum() == grid_1d.shape[0] - 8


def test_margin_below_sixteen_radii_rejected(grid_1d):
    with pytest.raises(GeometryError):
        make_subdomain(grid_1d, rho_cells=1.0, margin_cells=10)
    with pytest.raises(ParameterDomainError):
        make_subdomain(grid_1d, rho_cells=0.0)


def test_margin_leaving_nothing_rejected():
    grid = make_grid("cartesian_1d", [1.0], [21])
    with pytest.raises(GeometryError):
        make_subdomain(grid, rho_cells=1.0)


@pytest.mark.parametrize("grid_name", ["grid_1d", "grid_2d", "grid_radial"])
def test_ball_chain_covers_and_links(request, grid_name):
    grid = request.getfixturevalue(grid_name)
    report = check_chain(make_subdomain(grid, rho_cells=0.25))
    assert report["covers"]
    assert report["chained"]
    assert report["centers"] >= 1


def test_sublevel_measure_closed_and_open(grid_1d):
    region = make_subdomain(grid_1d, rho_cells=0.25)
    u = Field(grid_1d, np.where(grid_1d.interior_mask(), 1.0, 0.0))
    below = sublevel_measure(u, region, 0.5)
    assert below.alpha_hat == pytest.approx(1.0)
    at = sublevel_measure(u, region, 1.0)
    assert at.alpha_hat == pytest.approx(1.0)
    assert at.measure_gt == 0.0 and at.alpha_hat_open == 0.0
    with pytest.raises(ParameterDomainError):
        sublevel_measure(u, region, 0.0)


def test_alpha_bound_at_hypothesis_limits():
    q, L, M = 5.0, 0.2, 3.0
    r = q + 1.0
    bound = alpha_lower_bound(L, M, q, inner=0.25 / L ** r, outer=0.25 / M ** r)
    assert bound == pytest.approx(0.5 / M ** r)


def test_volume_constraint_holds_for_unit_data(params, u0_1d):
    region = make_subdomain(u0_1d.grid, rho_cells=0.25)
    report = volume_constraint_alpha(u0_1d, region, u0_1d.max(), 0.05, params)
    assert report["hypotheses"]["unit_norm"]
    assert report["hypotheses"]["M_dominates"]
    if report["applicable"]:
        assert report["holds"]
        assert report["measure_ge"] >= report["alpha_bound"] - 1e-10


def test_volume_constraint_reports_hypothesis_violation(params, u0_1d):
    region = make_subdomain(u0_1d.grid, rho_cells=0.25)
    report = volume_constraint_alpha(u0_1d, region, 0.5 * u0_1d.max(), 0.05, params)
    assert "M_dominates" in report["violations"]
    assert not report["applicable"]


def test_stretched_time_round_trip():
    t = np.array([0.0, 0.3, 0.9])
    tau = stretched_time(t, 1.0)
    assert tau[0] == 0.0
    assert np.all(np.diff(tau) > 0.0)
    np.testing.assert_allclose(unstretched_time(tau, 1.0), t, atol=1e-15)
    with pytest.raises(TimeRangeError):
        stretched_time(1.0, 1.0)
    with pytest.raises(ParameterDomainError):
        stretched_time(0.5, 0.0)


def test_resolve_m_policies(u0_1d):
    half = Field(u0_1d.grid, 0.5 * u0_1d.values)
    assert resolve_M("max", half, u0_1d) == pytest.approx(half.max())
    assert resolve_M("max_u0", half, u0_1d) == pytest.approx(u0_1d.max())
    assert resolve_M("2.5", half, u0_1d) == 2.5
    with pytest.raises(ParameterDomainError):
        resolve_M("largest", half, u0_1d)


def test_floor_track_strict(grid_1d, u0_1d):
    region = make_subdomain(grid_1d, rho_cells=0.25)
    track = positivity_floor_track([(0.0, u0_1d)], region)
    assert track[0][1] > 0.0
    zero = Field(grid_1d, np.zeros(grid_1d.shape))
    with pytest.raises(InvariantFailureError):
        positivity_floor_track([(0.0, u0_1d), (0.1, zero)], region)
    assert positivity_floor_track([(0.1, zero)], region, strict=False) == [(0.1, 0.0)]


def test_positivity_report_records(params, u0_1d):
    region = make_subdomain(u0_1d.grid, rho_cells=0.25)
    series = [(0.0, u0_1d), (0.05, u0_1d)]
    report = positivity_report(series, u0_1d, region, params, levels=[0.05, 0.2])
    assert len(report["records"]) == 4
    assert report["tau_monotone"]
    assert report["chain"]["covers"]
    assert report["failures"] == []
    assert all(record["inf_u"] > 0.0 for record in report["records"])


def test_sublevel_measure_shrinks_as_level_rises(u0_1d, u0_radial):
    for u0 in (u0_1d, u0_radial):
        region = make_subdomain(u0.grid, rho_cells=0.25)
        levels = np.linspace(0.01, 1.2 * u0.max(), 40)
        closed = [sublevel_measure(u0, region, L).measure_ge for L in levels]
        opened = [sublevel_measure(u0, region, L).measure_gt for L in levels]
        assert np.all(np.diff(closed) <= 0.0)
        assert np.all(np.diff(opened) <= 0.0)
        assert all(o <= c for o, c in zip(opened, closed))
        assert closed[-1] == 0.0


def test_radial_benchmark_meets_the_hypotheses():
    cfg = load_config(config.CONFIG_ROOT / "benchmark_radial.ini")
    diag = cfg.diagnostics
    u0 = cfg.initial_field()
    region = make_subdomain(u0.grid, diag.rho_cells, diag.margin_cells)
    report = positivity_report([(0.0, u0)], u0, region, cfg.flow_params(), diag.levels, diag.M_policy)
    applicable = [record for record in report["records"] if not record["violations"]]
    assert len(applicable) >= 1
    assert report["failures"] == []
    check = volume_constraint_alpha(u0, region, u0.max(), diag.levels[0], cfg.flow_params())
    assert check["applicable"] and check["holds"]
