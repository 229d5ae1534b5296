"""
Command pipeline: each cmd_* runs one stage against a RunConfig and writes its
artifacts under the output directory. run_command is the error boundary that
maps exceptions to exit codes.
"""
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import psutil
import scipy

import config
from numerics.core_types import Field, GridMode, SnapshotStore
from numerics.direct_flow import (
    DIRECT_COLUMNS,
    DirectRun,
    cross_validate,
    direct_rows,
    lambda_monotonicity,
    run_direct,
)
from numerics.exceptions import (
    ConfigError,
    DataIntegrityError,
    DegenerateInitialDataError,
    GeometryError,
    IncompleteRunError,
    IntegratorInconsistencyError,
    InvariantFailureError,
    ParameterDomainError,
    PSFlowError,
    StepFailureError,
    TimeRangeError,
)
from numerics.intrinsic_scaling import (
    TimeMap,
    boundedness_check,
    gamma_regularity_check,
    integrate_time_map,
    lambda_identity,
    rescale_solution,
    time_map_identity,
    weak_solution_contract,
)
from numerics.operators import PLaplacianOp
from numerics.positivity import make_subdomain, positivity_floor_track, positivity_report
from numerics.prototype_solver import (
    PrototypeRun,
    energy_balance_report,
    run_to_extinction,
    time_dissipation_report,
)
from numerics.talenti import (
    TalentiProfile,
    comparison_check,
    extinction_bound,
    pde_residual,
    talenti_table,
    with_initial_data,
)
from pipeline.run_config import RunConfig, load_config, parse_config
from utils.logging_config import run_log
from utils.snapshot_io import (
    load_store,
    read_json,
    read_snapshot,
    save_store,
    write_csv,
    write_json,
    write_snapshot,
)

logger = logging.getLogger(__name__)

CONSTRAINT_LIMIT = 1e-12
LAMBDA_IDENTITY_LIMIT = 2e-2
TIME_MAP_LIMIT = 1e-5

RESCALED_COLUMNS = ["t", "s", "lambda", "gamma", "max_u", "min_u_interior", "constraint_residual", "drift"]


@dataclass
class CommandResult:
    command: str
    exit_code: int
    out_dir: Path
    artifacts: List[Path] = field(default_factory=list)
    message: str = ""


def host_facts() -> Dict:
    """Machine and library facts recorded in every manifest"""
    memory = psutil.virtual_memory()
    return {
        "cpu_count": psutil.cpu_count(logical=True),
        "physical_cores": psutil.cpu_count(logical=False),
        "total_memory": int(memory.total),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def write_manifest(cfg: RunConfig, command: str, directory: Path, artifacts: Sequence[Path],
                   summary: Optional[Dict] = None) -> Path:
    path = directory / config.MANIFEST_NAME
    write_json(path, {
        "command": command,
        "version": config.VERSION,
        "config": cfg.resolved(),
        "config_hash": cfg.config_hash,
        "host": host_facts(),
        "artifacts": sorted(str(Path(a).relative_to(directory)) for a in artifacts),
        "summary": summary or {},
    })
    return path


def _series_index(directory: Path, series: Sequence[Tuple[float, Field, float]]) -> List[Path]:
    """Write u snapshots and series.json listing {t, lambda, file}"""
    written, entries = [], []
    for k, (t, u, lam) in enumerate(series):
        name = f"snapshots/u_{k:06d}.psf"
        write_snapshot(directory / name, u)
        written.append(directory / name)
        entries.append({"t": t, "lambda": lam, "file": name})
    write_json(directory / "series.json", {"entries": entries})
    written.append(directory / "series.json")
    return written


def load_series(directory: Path) -> List[Tuple[float, Field, float]]:
    """
    Read a (t, u, lambda) series written by cmd_rescale or cmd_solve_direct

    Raises:
        DataIntegrityError: If the index or a snapshot is missing
    """
    index_path = directory / "series.json"
    if not index_path.exists():
        raise DataIntegrityError(f"{index_path} not found")
    series = []
    for entry in read_json(index_path)["entries"]:
        path = directory / entry["file"]
        if not path.exists():
            raise DataIntegrityError(f"snapshot {path} is missing")
        series.append((float(entry["t"]), read_snapshot(path), float(entry["lambda"])))
    return series


def prototype_run(cfg: RunConfig, refine: int = 0, **overrides) -> PrototypeRun:
    """
    PrototypeRun from the solver block on the configured grid refined `refine` times

    The s-step controls shrink with h, by 2^-refine, so a refined run is refined in s as well.
    """
    grid = cfg.make_grid(refine)
    solver = cfg.solver
    factor = 0.5 ** refine
    options = dict(
        ds_init=solver.ds_init * factor, ds_min=solver.ds_min * factor, ds_max=solver.ds_max * factor,
        step_scale=solver.step_scale * factor, energy_budget=solver.energy_budget,
        snapshot_every=solver.snapshot_every, snapshot_interval=solver.snapshot_interval * factor,
        max_steps=solver.max_steps * 2 ** refine,
    )
    options.update(overrides)
    return PrototypeRun(params=cfg.flow_params(), grid=grid, u0=cfg.initial_field(grid), **options)


def talenti_profile(cfg: RunConfig) -> TalentiProfile:
    grid = cfg.make_grid()
    center = (0.0,) if grid.mode == GridMode.RADIAL else tuple(0.5 * e for e in grid.extent)
    return TalentiProfile(params=cfg.flow_params(), lam=cfg.diagnostics.talenti_lambda,
                          center=center, normalization=cfg.diagnostics.normalization)


def rescaled_series(store: SnapshotStore, time_map: TimeMap, samples: int,
                    op: Optional[PLaplacianOp] = None):
    """Rescaled states at `samples` equally spaced t over the time map"""
    op = op or PLaplacianOp(store.params, store.grid)
    times = np.linspace(0.0, time_map.t_end, samples)
    return [rescale_solution(store, time_map, float(t), op) for t in times]


def cmd_solve_prototype(cfg: RunConfig, out: Path) -> List[Path]:
    """Run the prototype flow to extinction; ledger, snapshots, energy balance"""
    directory = out / config.PROTOTYPE_DIR
    run = prototype_run(cfg)
    try:
        store = run_to_extinction(run)
    except IncompleteRunError as e:
        if e.store is not None:
            save_store(e.store, directory)
        raise

    written = save_store(store, directory)
    balance = energy_balance_report(store)
    write_csv(directory / "energy_balance.csv", ["s1", "s2", "residual"],
              ([s1, s2, R] for (s1, s2), R in balance))
    written.append(directory / "energy_balance.csv")
    summary = {
        "extinction_time": store.extinction_time,
        "steps": len(store.ledger) - 1,
        "snapshots": len(store.entries),
        "max_energy_residual": max((abs(R) for _, R in balance), default=0.0),
        "time_dissipation": time_dissipation_report(store),
        "violations": len(store.violations),
    }
    try:
        summary["extinction_bound"] = extinction_bound(run.u0, talenti_profile(cfg))
    except GeometryError as e:
        logger.info(f"No extinction bound for this geometry: {e}")
    write_json(directory / "summary.json", summary)
    written.append(directory / "summary.json")
    written.append(write_manifest(cfg, "solve-prototype", directory, written, summary))
    if store.violations:
        raise InvariantFailureError(
            f"{len(store.violations)} maximum-principle or monotonicity violations", report=store.violations
        )
    return written


def load_extinct_store(out: Path) -> SnapshotStore:
    store = load_store(out / config.PROTOTYPE_DIR)
    if store.extinction_time is None:
        raise TimeRangeError(
            f"prototype run is incomplete; last valid s = {store.last.s:.17g}, no extinction time"
        )
    return store


def cmd_rescale(cfg: RunConfig, out: Path) -> List[Path]:
    """Time map, rescaled u samples and the inline constraint, lambda and boundedness checks"""
    directory = out / config.RESCALED_DIR
    store = load_extinct_store(out)
    params = store.params
    op = PLaplacianOp(params, store.grid)
    time_map = integrate_time_map(store, t_end=cfg.solver.t_end, samples=cfg.solver.map_samples)

    written = []
    write_csv(directory / "time_map.csv", ["t", "tau", "Lambda", "s", "gamma"], time_map.rows())
    written.append(directory / "time_map.csv")

    states = rescaled_series(store, time_map, cfg.output.samples, op)
    write_csv(directory / "rescaled.csv", RESCALED_COLUMNS, (
        [st.t, st.s, st.lambda_t, st.gamma_t, st.u.max(),
         float(np.min(st.u.values[store.grid.interior_mask()])), st.constraint_residual, st.drift]
        for st in states
    ))
    written.append(directory / "rescaled.csv")
    series = [(st.t, st.u, st.lambda_t) for st in states]
    written += _series_index(directory, series)

    u0 = series[0][1]
    checks = {
        "constraint": {
            "max_residual": max(st.constraint_residual for st in states),
            "passed": all(st.constraint_residual <= CONSTRAINT_LIMIT for st in states),
        },
        "time_map": time_map_identity(time_map),
        "lambda_identity": lambda_identity(time_map, states),
        "boundedness": boundedness_check(series, u0, params),
        "gamma_regularity": gamma_regularity_check(time_map, u0, op),
        "weak_solution": weak_solution_contract(series, u0, params, op),
    }
    checks["time_map"]["passed"] = checks["time_map"]["max_relative_error"] <= TIME_MAP_LIMIT
    lam_error = checks["lambda_identity"]["max_relative_error"]
    checks["lambda_identity"]["passed"] = bool(np.isfinite(lam_error) and lam_error <= LAMBDA_IDENTITY_LIMIT)
    write_json(directory / "checks.json", checks)
    written.append(directory / "checks.json")
    summary = {"S_star": time_map.S_star, "t_end": time_map.t_end,
               "route_discrepancy": time_map.discrepancy}
    written.append(write_manifest(cfg, "rescale", directory, written, summary))

    failed = [name for name in ("constraint", "time_map", "lambda_identity", "boundedness")
              if not checks[name]["passed"]]
    if failed:
        raise InvariantFailureError(f"rescaled checks failed: {', '.join(failed)}", report=checks)
    return written


def cmd_solve_direct(cfg: RunConfig, out: Path) -> List[Path]:
    """Direct constrained-flow run, with the cross-solver comparison when a prototype run exists"""
    directory = out / config.DIRECT_DIR
    params, grid = cfg.flow_params(), cfg.make_grid()
    run = DirectRun(params=params, grid=grid, u0=cfg.initial_field(grid), dt=cfg.solver.dt,
                    t_end=cfg.solver.direct_t_end, variant=cfg.solver.variant,
                    record_every=cfg.solver.record_every)
    states = run_direct(run)

    written = []
    write_csv(directory / "direct.csv", DIRECT_COLUMNS, direct_rows(states, params))
    written.append(directory / "direct.csv")
    series = [(st.t, st.u, st.lambda_t) for st in states]
    written += _series_index(directory, series)

    residuals = [st.constraint_residual(params) for st in states]
    negative = [st.t for st in states if st.u.min() < -1e-12]
    checks = {
        "constraint": {"max_residual": max(residuals),
                       "passed": cfg.solver.variant != "projection" or max(residuals) <= CONSTRAINT_LIMIT},
        "nonnegative": {"violations": negative, "passed": not negative},
        "lambda_monotonicity": lambda_monotonicity(states),
        "boundedness": boundedness_check(series, run.u0, params),
    }
    prototype_dir = out / config.PROTOTYPE_DIR
    if (prototype_dir / "store.json").exists():
        store = load_extinct_store(out)
        time_map = integrate_time_map(store, t_end=run.t_end, samples=cfg.solver.map_samples)
        checks["cross_validation"] = cross_validate(run, time_map, store)
    write_json(directory / "checks.json", checks)
    written.append(directory / "checks.json")
    summary = {"steps": int(np.ceil(run.t_end / run.dt - 1e-9)), "variant": run.variant,
               "final_lambda": states[-1].lambda_t}
    written.append(write_manifest(cfg, "solve-direct", directory, written, summary))

    failed = [name for name in ("constraint", "nonnegative", "boundedness") if not checks[name]["passed"]]
    if failed:
        raise InvariantFailureError(f"direct-flow checks failed: {', '.join(failed)}", report=checks)
    return written


def cmd_talenti(cfg: RunConfig, out: Path) -> List[Path]:
    """Profile table, PDE residual, extinction bound and the comparison check"""
    directory = out / config.TALENTI_DIR
    grid = cfg.make_grid()
    params = cfg.flow_params()
    u0 = cfg.initial_field(grid)
    prof = with_initial_data(talenti_profile(cfg), u0)
    op = PLaplacianOp(params, grid)

    written = []
    header, rows = talenti_table(prof, grid, cfg.diagnostics.talenti_s)
    write_csv(directory / "talenti.csv", header, rows)
    written.append(directory / "talenti.csv")

    report = {
        "amplitude": prof.amplitude,
        "normalization": prof.normalization,
        "Z0": prof.Z0,
        "pde_residual": pde_residual(prof, op, cfg.diagnostics.residual_r_min),
        "extinction_bound": extinction_bound(u0, prof),
    }
    if (out / config.PROTOTYPE_DIR / "store.json").exists():
        store = load_store(out / config.PROTOTYPE_DIR)
        report["comparison"] = comparison_check(store, prof, cfg.diagnostics.collar)
        report["extinction_time"] = store.extinction_time
    write_json(directory / "talenti.json", report)
    written.append(directory / "talenti.json")
    written.append(write_manifest(cfg, "talenti", directory, written,
                                  {"extinction_bound": report["extinction_bound"]}))
    return written


def cmd_positivity_report(cfg: RunConfig, out: Path) -> List[Path]:
    """Measure hypotheses and interior positivity over a stored u series"""
    directory = out / config.POSITIVITY_DIR
    diag = cfg.diagnostics
    source_dir = out / (config.DIRECT_DIR if diag.source == "direct" else config.RESCALED_DIR)
    series = load_series(source_dir)
    grid = series[0][1].grid
    region = make_subdomain(grid, diag.rho_cells, diag.margin_cells)
    fields = [(t, u) for t, u, _ in series]
    report = positivity_report(fields, series[0][1], region, cfg.flow_params(), diag.levels,
                               diag.M_policy, diag.t_hat)
    report["floor"] = positivity_floor_track(fields, region, strict=False)
    report["source"] = diag.source
    write_json(directory / "positivity.json", report)
    written = [directory / "positivity.json"]
    written.append(write_manifest(cfg, "positivity-report", directory, written,
                                  {"records": len(report["records"]), "failures": len(report["failures"])}))
    floor_bad = [t for t, inf_u in report["floor"] if not inf_u > 0.0]
    if report["failures"] or floor_bad:
        raise InvariantFailureError(
            f"positivity report: {len(report['failures'])} measure failures, "
            f"{len(floor_bad)} nonpositive infima", report=report,
        )
    return written


def cmd_verify(cfg: RunConfig, out: Path) -> List[Path]:
    from pipeline.verification import evaluate

    report = evaluate(cfg, out)
    path = out / config.REPORT_NAME
    write_json(path, report)
    statuses = [c["status"] for c in report["criteria"]]
    if "fail" in statuses:
        raise InvariantFailureError(f"{statuses.count('fail')} acceptance criteria failed", report=report)
    if "missing-input" in statuses:
        raise IncompleteRunError(f"{statuses.count('missing-input')} criteria lack their inputs")
    return [path]


COMMANDS: Dict[str, Callable[[RunConfig, Path], List[Path]]] = {
    "solve-prototype": cmd_solve_prototype,
    "rescale": cmd_rescale,
    "solve-direct": cmd_solve_direct,
    "talenti": cmd_talenti,
    "positivity-report": cmd_positivity_report,
    "verify": cmd_verify,
}


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ConfigError, ParameterDomainError, GeometryError, DegenerateInitialDataError)):
        return config.EXIT_CONFIG
    if isinstance(error, (IncompleteRunError, StepFailureError, TimeRangeError, DataIntegrityError)):
        return config.EXIT_INCOMPLETE
    if isinstance(error, (InvariantFailureError, IntegratorInconsistencyError)):
        return config.EXIT_INVARIANT
    return config.EXIT_UNEXPECTED


def run_command(command: str, config_path: Optional[Path] = None, config_text: Optional[str] = None,
                out: Optional[Path] = None, seed: Optional[int] = None) -> CommandResult:
    """
    Load the config, run one command and map its outcome to an exit code

    Args:
        command: One of COMMANDS
        config_path: INI file to load
        config_text: INI text (used when no path is given)
        out: Output directory override
        seed: Overrides [diagnostics] seed for the randomized probes

    Returns:
        CommandResult; never raises for errors raised by the command itself
    """
    if command not in COMMANDS:
        return CommandResult(command, config.EXIT_CONFIG, Path(out or "."),
                             message=f"unknown command {command!r}")
    started = time.perf_counter()
    out_dir = Path(out) if out else Path(".")
    try:
        if config_path is not None:
            cfg = load_config(config_path)
        elif config_text is not None:
            cfg = parse_config(config_text)
        else:
            raise ConfigError("no configuration given")
        if seed is not None:
            cfg = cfg.model_copy(update={"diagnostics": cfg.diagnostics.model_copy(update={"seed": seed})})
        out_dir = cfg.out_dir(out)
        out_dir.mkdir(parents=True, exist_ok=True)
    except PSFlowError as e:
        logger.error(f"{command} failed (exit {exit_code_for(e)}): {str(e)}")
        return CommandResult(command, exit_code_for(e), out_dir, message=str(e))
    except OSError as e:
        logger.exception(f"{command} could not prepare {out_dir}: {str(e)}")
        return CommandResult(command, config.EXIT_UNEXPECTED, out_dir, message=str(e))

    with run_log(out_dir):
        logger.info(f"Running {command} into {out_dir} (config sha256 {cfg.config_hash[:12]})")
        try:
            artifacts = COMMANDS[command](cfg, out_dir)
        except PSFlowError as e:
            code = exit_code_for(e)
            logger.error(f"{command} failed (exit {code}): {str(e)}")
            return CommandResult(command, code, out_dir, message=str(e))
        except Exception as e:
            logger.exception(f"{command} failed unexpectedly: {str(e)}")
            return CommandResult(command, config.EXIT_UNEXPECTED, out_dir, message=str(e))
        logger.info(f"{command} finished in {time.perf_counter() - started:.1f}s, {len(artifacts)} artifacts")
    return CommandResult(command, config.EXIT_OK, out_dir, artifacts)
