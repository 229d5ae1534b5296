"""
Acceptance criteria evaluated against the artifacts of one output directory.

Each criterion returns a record with status pass, fail, missing-input,
not-measurable (refinement study on a grid coarser than 41 points per axis)
or not-applicable (radial-only criteria on Cartesian grids).
"""
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

import config
from numerics.convergence import convergence_slope, measurable, within
from numerics.core_types import GridMode, SnapshotStore
from numerics.direct_flow import DirectRun, cross_validate, joint_refinement_slope, run_direct
from numerics.exceptions import DataIntegrityError, PSFlowError, TimeRangeError
from numerics.intrinsic_scaling import integrate_time_map, lambda_identity
from numerics.operators import PLaplacianOp, flux_monotonicity_sweep
from numerics.prototype_solver import MAX_PRINCIPLE_TOL, PrototypeRun, energy_balance_report, run_to_extinction
from numerics.talenti import comparison_check, extinction_bound, pde_residual, with_initial_data
from pipeline.commands import load_extinct_store, prototype_run, rescaled_series, talenti_profile
from pipeline.run_config import RunConfig
from utils.snapshot_io import load_store, read_csv, read_json

logger = logging.getLogger(__name__)

PASS, FAIL = "pass", "fail"
MISSING, NOT_MEASURABLE, NOT_APPLICABLE = "missing-input", "not-measurable", "not-applicable"

ENERGY_RESIDUAL_LIMIT = 1e-4
ENERGY_SLOPE = (0.8, 1.5)
EXTINCTION_SLACK = 1.05
EXTINCTION_GRID_CHANGE = 0.05
RESIDUAL_ORDER = (1.7, 2.3)
COMPARISON_RATIO = (1.4, 2.6)
CONSTRAINT_LIMIT = 1e-12
TIME_MAP_LIMIT = 1e-5
ROUTE_LIMIT = 1e-6
LAMBDA_LIMIT = 2e-2
CROSS_LIMIT = 5e-2
JOINT_SLOPE_MIN = 0.8
MEASURE_SLACK = 1e-10
PROBE_EQUALITY = 1e-15


class MissingInput(Exception):
    pass


class VerificationContext:
    """Lazy, cached access to artifacts and to the extra refinement runs"""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = Path(out)
        self.grid = cfg.make_grid()
        self._cache: Dict[str, object] = {}
        self.extra_runs: List[SnapshotStore] = []

    @property
    def radial(self) -> bool:
        return self.grid.mode == GridMode.RADIAL

    @property
    def measurable(self) -> bool:
        return measurable(self.grid.points)

    @property
    def refine(self) -> bool:
        return self.cfg.diagnostics.refinement and self.measurable

    def _cached(self, key: str, build: Callable):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def require(self, *parts: str) -> Path:
        path = self.out.joinpath(*parts)
        if not path.exists():
            raise MissingInput(f"{path} not found")
        return path

    def store(self) -> SnapshotStore:
        self.require(config.PROTOTYPE_DIR, "store.json")
        return self._cached("store", lambda: load_store(self.out / config.PROTOTYPE_DIR))

    def extinct_store(self) -> SnapshotStore:
        self.require(config.PROTOTYPE_DIR, "store.json")
        try:
            return self._cached("extinct", lambda: load_extinct_store(self.out))
        except TimeRangeError as e:
            raise MissingInput(str(e))

    def checks(self, subdir: str) -> Dict:
        return self._cached(f"checks:{subdir}", lambda: read_json(self.require(subdir, "checks.json")))

    def column(self, subdir: str, name: str, column: str) -> np.ndarray:
        header, data = read_csv(self.require(subdir, name))
        return data[:, header.index(column)]

    def extra_run(self, run: PrototypeRun) -> SnapshotStore:
        """Run a prototype flow for a refinement study; its store is kept for the maximum principle"""
        store = run_to_extinction(run)
        self.extra_runs.append(store)
        return store

    def refined_store(self) -> SnapshotStore:
        """Prototype run to extinction with every cell and every s-step halved"""
        def build():
            logger.info("Verification: prototype run on the refined grid")
            return self.extra_run(prototype_run(self.cfg, refine=1))
        return self._cached("refined", build)


def criterion(number: int, name: str, status: str, **measured) -> Dict:
    return {"id": number, "name": name, "status": status, "measured": measured}


def energy_equality(ctx: VerificationContext) -> Dict:
    name = "energy equality"
    store = ctx.extinct_store()
    diag = ctx.cfg.diagnostics
    s_stop = min(diag.energy_s_stop, 0.5 * store.extinction_time)
    errors = []
    for ds in config.ENERGY_STEP_LADDER:
        run = prototype_run(ctx.cfg, ds_init=ds, ds_min=ds, ds_max=ds, snapshot_every=run_cap(s_stop, ds),
                            snapshot_interval=diag.energy_interval, s_stop=s_stop,
                            max_steps=run_cap(s_stop, ds))
        balance = energy_balance_report(ctx.extra_run(run))
        errors.append(max(abs(R) for _, R in balance))
        logger.info(f"Energy equality at ds={ds:g}: max |R| = {errors[-1]:.3e}")
    slope = convergence_slope(config.ENERGY_STEP_LADDER, errors)
    measured = dict(ds=list(config.ENERGY_STEP_LADDER), max_residual=errors, slope=slope, s_stop=s_stop)
    if errors[-1] > ENERGY_RESIDUAL_LIMIT:
        return criterion(1, name, FAIL, **measured)
    # On a coarse grid the balance is still checked; only the slope goes unjudged
    if not ctx.measurable:
        return criterion(1, name, NOT_MEASURABLE, points=list(ctx.grid.points), **measured)
    return criterion(1, name, PASS if within(slope, *ENERGY_SLOPE) else FAIL, **measured)


def run_cap(s_stop: float, ds: float) -> int:
    return int(np.ceil(s_stop / ds)) + 10


def maximum_principle(ctx: VerificationContext) -> Dict:
    if ctx.refine:
        ctx.refined_store()
    stores = [ctx.store()] + ctx.extra_runs
    problems: List[str] = []
    for store in stores:
        problems += store.violations
        top = store.entries[0].field.max()
        for entry in store.entries:
            if entry.field.min() < -1e-12:
                problems.append(f"s={entry.s:.10g}: min v {entry.field.min():.3e}")
            if entry.field.max() > top + MAX_PRINCIPLE_TOL:
                problems.append(f"s={entry.s:.10g}: max v {entry.field.max():.17g} above max v0")
        if np.any(store.ledger_column("min_v") < -1e-12):
            problems.append("ledger min_v below zero")
    return criterion(2, "maximum principle", PASS if not problems else FAIL,
                     runs=len(stores), violations=problems[:20], count=len(problems))


def extinction_bound_check(ctx: VerificationContext) -> Dict:
    name = "extinction bound"
    if not ctx.radial:
        return criterion(3, name, NOT_APPLICABLE)
    store = ctx.extinct_store()
    prof = replace(talenti_profile(ctx.cfg), normalization="sobolev")
    bound = extinction_bound(store.entries[0].field, prof)
    measured = {"S_star": store.extinction_time, "bound": bound,
                "ratio": store.extinction_time / bound}
    ok = store.extinction_time <= bound * EXTINCTION_SLACK
    if ctx.refine:
        refined = ctx.refined_store().extinction_time
        change = abs(refined - store.extinction_time) / store.extinction_time
        measured.update(S_star_refined=refined, grid_change=change)
        ok = ok and change < EXTINCTION_GRID_CHANGE
    elif not ctx.measurable:
        return criterion(3, name, NOT_MEASURABLE, **measured)
    return criterion(3, name, PASS if ok else FAIL, **measured)


def talenti_residual_order(ctx: VerificationContext) -> Dict:
    name = "Talenti PDE residual order"
    if not ctx.radial:
        return criterion(4, name, NOT_APPLICABLE)
    if not ctx.measurable:
        return criterion(4, name, NOT_MEASURABLE, points=list(ctx.grid.points))
    params = ctx.cfg.flow_params()
    prof = replace(talenti_profile(ctx.cfg), normalization="sobolev")
    hs, residuals = [], []
    for level in range(config.TALENTI_REFINEMENTS):
        grid = ctx.cfg.make_grid(level)
        hs.append(grid.h)
        residuals.append(pde_residual(prof, PLaplacianOp(params, grid), ctx.cfg.diagnostics.residual_r_min))
    order = convergence_slope(hs, residuals)
    return criterion(4, name, PASS if within(order, *RESIDUAL_ORDER) else FAIL,
                     h=hs, residual=residuals, order=order)


def comparison_principle(ctx: VerificationContext) -> Dict:
    name = "comparison principle"
    if not ctx.radial:
        return criterion(5, name, NOT_APPLICABLE)
    store = ctx.store()
    prof = replace(talenti_profile(ctx.cfg), normalization="sobolev")
    collar = ctx.cfg.diagnostics.collar

    def tolerance(run_store: SnapshotStore) -> float:
        bounded = with_initial_data(prof, run_store.entries[0].field)
        return max(comparison_check(run_store, bounded, collar)["max_excess"], 0.0)

    tol_h = tolerance(store)
    if not ctx.measurable:
        return criterion(5, name, NOT_MEASURABLE, tol=tol_h)
    if not ctx.refine:
        return criterion(5, name, PASS if tol_h == 0.0 else FAIL, tol=tol_h, refinement="skipped")
    tol_h2 = tolerance(ctx.refined_store())
    if tol_h == 0.0:
        ok, ratio = tol_h2 == 0.0, None
    elif tol_h2 == 0.0:
        ok, ratio = True, None
    else:
        ratio = tol_h / tol_h2
        ok = within(ratio, *COMPARISON_RATIO)
    return criterion(5, name, PASS if ok else FAIL, tol=tol_h, tol_refined=tol_h2, ratio=ratio)


def volume_constraint(ctx: VerificationContext) -> Dict:
    rescaled = float(np.max(ctx.column(config.RESCALED_DIR, "rescaled.csv", "constraint_residual")))
    direct = float(np.max(ctx.column(config.DIRECT_DIR, "direct.csv", "constraint_residual")))
    projection = ctx.cfg.solver.variant == "projection"
    ok = rescaled <= CONSTRAINT_LIMIT and (direct <= CONSTRAINT_LIMIT or not projection)
    return criterion(6, "volume constraint", PASS if ok else FAIL,
                     rescaled_max=rescaled, direct_max=direct, direct_variant=ctx.cfg.solver.variant)


def time_map_check(ctx: VerificationContext) -> Dict:
    report = ctx.checks(config.RESCALED_DIR)["time_map"]
    ok = report["max_relative_error"] <= TIME_MAP_LIMIT and report["route_discrepancy"] <= ROUTE_LIMIT
    return criterion(7, "time-map identity", PASS if ok else FAIL,
                     max_relative_error=report["max_relative_error"],
                     route_discrepancy=report["route_discrepancy"])


def lambda_identity_check(ctx: VerificationContext) -> Dict:
    baseline = ctx.checks(config.RESCALED_DIR)["lambda_identity"]["max_relative_error"]
    measured = {"baseline": baseline}
    ok = baseline is not None and np.isfinite(baseline) and baseline <= LAMBDA_LIMIT
    if ok and ctx.refine:
        store = ctx.refined_store()
        time_map = integrate_time_map(store, t_end=ctx.cfg.solver.t_end, samples=ctx.cfg.solver.map_samples)
        states = rescaled_series(store, time_map, ctx.cfg.output.samples)
        refined = lambda_identity(time_map, states)["max_relative_error"]
        measured["refined"] = refined
        ok = refined < baseline
    return criterion(8, "lambda identity", PASS if ok else FAIL, **measured)


def cross_solver(ctx: VerificationContext) -> Dict:
    name = "cross-solver oracle"
    report = ctx.checks(config.DIRECT_DIR).get("cross_validation")
    if report is None:
        raise MissingInput("direct run has no cross-validation (prototype artifacts were absent)")
    measured = {"max_distance": report["max_distance"], "max_lambda_gap": report["max_lambda_gap"]}
    ok = report["max_distance"] <= CROSS_LIMIT and report["max_lambda_gap"] <= CROSS_LIMIT
    if not ctx.measurable:
        return criterion(9, name, NOT_MEASURABLE, **measured)
    if ctx.refine:
        cfg = ctx.cfg
        store = ctx.refined_store()
        params, grid = cfg.flow_params(), cfg.make_grid(1)
        direct = DirectRun(params=params, grid=grid, u0=store.entries[0].field, dt=0.5 * cfg.solver.dt,
                           t_end=cfg.solver.direct_t_end, variant=cfg.solver.variant,
                           record_every=2 * cfg.solver.record_every)
        run_direct(direct)
        time_map = integrate_time_map(store, t_end=direct.t_end, samples=cfg.solver.map_samples)
        refined = cross_validate(direct, time_map, store)
        slope = joint_refinement_slope([(ctx.grid.h, report), (grid.h, refined)])
        measured.update(refined_distance=refined["max_distance"], joint_slope=slope)
        ok = ok and slope is not None and slope >= JOINT_SLOPE_MIN
    return criterion(9, name, PASS if ok else FAIL, **measured)


def boundedness(ctx: VerificationContext) -> Dict:
    rescaled = ctx.checks(config.RESCALED_DIR)["boundedness"]
    direct = ctx.checks(config.DIRECT_DIR)["boundedness"]
    violations = rescaled["violations"] + direct["violations"]
    return criterion(10, "boundedness bound", PASS if not violations else FAIL,
                     rescaled_violations=rescaled["violations"], direct_violations=direct["violations"])


def measure_bound(ctx: VerificationContext) -> Dict:
    report = read_json(ctx.require(config.POSITIVITY_DIR, "positivity.json"))
    hypothesis_names = {"unit_norm", "M_dominates", "outer_small", "level_small"}
    applicable = [r for r in report["records"] if not hypothesis_names & set(r["violations"])]
    if not applicable:
        return criterion(11, "measure lower bound", NOT_APPLICABLE, records=len(report["records"]))
    slack = min(r["measure_ge"] - r["alpha_bound"] for r in applicable)
    ok = not report["failures"] and slack >= -MEASURE_SLACK
    return criterion(11, "measure lower bound", PASS if ok else FAIL,
                     applicable=len(applicable), records=len(report["records"]),
                     min_slack=slack, failures=report["failures"])


def algebraic_probe(ctx: VerificationContext) -> Dict:
    rng = np.random.default_rng(ctx.cfg.diagnostics.seed)
    sweeps = [flux_monotonicity_sweep(rng, p, config.PROBE_PAIRS) for p in config.PROBE_EXPONENTS]
    equality = next((s["max_relative_gap"] for s in sweeps if s["p"] == 2.0), None)
    ok = all(s["violations"] == 0 for s in sweeps) and (equality is None or equality <= PROBE_EQUALITY)
    return criterion(12, "algebraic inequality probe", PASS if ok else FAIL,
                     seed=ctx.cfg.diagnostics.seed, sweeps=sweeps, p2_equality_gap=equality)


CRITERIA = [
    (1, "energy equality", energy_equality),
    (2, "maximum principle", maximum_principle),
    (3, "extinction bound", extinction_bound_check),
    (4, "Talenti PDE residual order", talenti_residual_order),
    (5, "comparison principle", comparison_principle),
    (6, "volume constraint", volume_constraint),
    (7, "time-map identity", time_map_check),
    (8, "lambda identity", lambda_identity_check),
    (9, "cross-solver oracle", cross_solver),
    (10, "boundedness bound", boundedness),
    (11, "measure lower bound", measure_bound),
    (12, "algebraic inequality probe", algebraic_probe),
]

ARTIFACT_DIRS = (config.PROTOTYPE_DIR, config.RESCALED_DIR, config.DIRECT_DIR,
                 config.TALENTI_DIR, config.POSITIVITY_DIR)


def evaluate(cfg: RunConfig, out: Path, only: Optional[List[int]] = None) -> Dict:
    """
    Evaluate every acceptance criterion; never raises for criterion failures

    Args:
        cfg: Run configuration the artifacts were produced with
        out: Output directory holding the artifacts
        only: Optional subset of criterion numbers

    Returns:
        Report with one record per criterion and a status tally
    """
    out = Path(out)
    ctx = VerificationContext(cfg, out)
    have_artifacts = any((out / d).exists() for d in ARTIFACT_DIRS)
    records = []
    # the maximum principle also covers refinement runs made by the other criteria
    for number, name, check in sorted(CRITERIA, key=lambda c: c[0] == 2):
        if only and number not in only:
            continue
        if not have_artifacts:
            records.append(criterion(number, name, MISSING, reason=f"no artifacts under {out}"))
            continue
        try:
            record = check(ctx)
        except (MissingInput, DataIntegrityError) as e:
            record = criterion(number, name, MISSING, reason=str(e))
        except PSFlowError as e:
            logger.error(f"criterion {number} ({name}) raised: {str(e)}")
            record = criterion(number, name, FAIL, error=str(e))
        logger.info(f"criterion {number} ({name}): {record['status']}")
        records.append(record)
    records.sort(key=lambda r: r["id"])
    tally = {status: sum(r["status"] == status for r in records)
             for status in (PASS, FAIL, MISSING, NOT_MEASURABLE, NOT_APPLICABLE)}
    return {"config_hash": cfg.config_hash, "criteria": records, "tally": tally}
