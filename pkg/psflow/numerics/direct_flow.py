"""
Semi-implicit solver for the constrained flow d_t(u^q) - Delta_p u = lambda(t) u^q.

A step is a backward Euler prototype substep of length dt followed by the
projection back onto the unit L^{q+1} sphere. The prototype clock advances by
dt * gamma_prev^kappa and gamma accumulates the projection factors, so each
direct run also carries its own estimate of s(t) and gamma(t).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from numerics.convergence import convergence_slope
from numerics.core_types import Field, FlowParams, Grid, SnapshotStore
from numerics.exceptions import GeometryError, ParameterDomainError
from numerics.intrinsic_scaling import TimeMap, rescale_solution
from numerics.operators import PLaplacianOp, lr_norm
from numerics.prototype_solver import ImplicitStepper

logger = logging.getLogger(__name__)

VARIANTS = ("projection", "source")
LAMBDA_MONOTONE_TOL = 1e-6


@dataclass
class DirectState:
    t: float
    u: Field = field(repr=False)
    lambda_t: float
    s: float
    gamma: float
    projection_factor: float = 1.0

    def constraint_residual(self, params: FlowParams) -> float:
        return abs(lr_norm(self.u, params.q + 1.0) - 1.0)

    def min_interior(self) -> float:
        return float(np.min(self.u.values[self.u.grid.interior_mask()]))


@dataclass
class DirectRun:
    """
    Direct integration of the constrained flow on [0, t_end] with step dt.

    variant "projection" (default) renormalizes after every substep; "source"
    puts lambda_prev u^q on the right side explicitly and never projects.
    """
    params: FlowParams
    grid: Grid
    u0: Field
    dt: float
    t_end: float
    variant: str = "projection"
    record_every: int = 1
    series: List[DirectState] = field(default_factory=list)
    op: Optional[PLaplacianOp] = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.dt > 0.0 and self.t_end > 0.0):
            raise ParameterDomainError(f"need dt > 0 and t_end > 0, got dt={self.dt}, t_end={self.t_end}")
        if self.variant not in VARIANTS:
            raise ParameterDomainError(f"unknown direct-flow variant {self.variant!r}")
        if self.u0.grid != self.grid:
            raise GeometryError("initial data lives on a different grid")
        norm = lr_norm(self.u0, self.params.q + 1.0)
        if abs(norm - 1.0) > 1e-10:
            raise ParameterDomainError(f"direct flow needs |u0|_(q+1) = 1, got {norm:.17g}")
        if self.op is None:
            self.op = PLaplacianOp(self.params, self.grid)


def step_direct(stepper: ImplicitStepper, u_prev: Field, dt: float,
                lambda_prev: float = 0.0, variant: str = "projection") -> Tuple[Field, float, float]:
    """
    One constrained-flow step

    Args:
        stepper: Implicit solver on the grid of u_prev
        u_prev: Current state, unit L^{q+1} norm
        dt: Step length
        lambda_prev: Multiplier of the current state (source variant only)
        variant: "projection" or "source"

    Returns:
        (u_next, lambda_used, projection factor |u*|_(q+1))
    """
    params = stepper.params
    r = params.q + 1.0
    if variant == "projection":
        substep = stepper.step(u_prev, dt).field
        factor = lr_norm(substep, r)
        u_next = Field(u_prev.grid, substep.values / factor)
    elif variant == "source":
        rhs = np.abs(u_prev.values) ** params.q * (1.0 + dt * lambda_prev)
        u_next = stepper.solve(u_prev.values, rhs, dt).field
        factor = 1.0
    else:
        raise ParameterDomainError(f"unknown direct-flow variant {variant!r}")
    return u_next, stepper.op.grad_p_energy(u_next), factor


def run_direct(run: DirectRun) -> List[DirectState]:
    """Integrate the constrained flow to t_end, recording every record_every steps"""
    params, op = run.params, run.op
    stepper = ImplicitStepper(op)
    kappa = params.kappa
    u = run.u0.copy()
    lam = op.grad_p_energy(u)
    t, s, gamma = 0.0, 0.0, 1.0
    run.series = [DirectState(0.0, u.copy(), lam, 0.0, 1.0)]
    steps = int(np.ceil(run.t_end / run.dt - 1e-9))
    logger.info(f"Direct run ({run.variant}): {steps} steps of dt={run.dt:g} to t={run.t_end:g}")
    increases = 0
    for k in range(1, steps + 1):
        dt = min(run.dt, run.t_end - t)
        u_next, lam_next, factor = step_direct(stepper, u, dt, lam, run.variant)
        logger.debug(f"t={t + dt:.6g}: projection factor {factor:.17g}, max u {u_next.max():.6g}")
        if lam_next > lam * (1.0 + LAMBDA_MONOTONE_TOL):
            increases += 1
        s += dt * gamma ** kappa
        gamma *= factor
        t = k * run.dt if k < steps else run.t_end
        u, lam = u_next, lam_next
        if k % run.record_every == 0 or k == steps:
            run.series.append(DirectState(t, u.copy(), lam, s, gamma, factor))
    if increases:
        logger.info(f"lambda increased on {increases} of {steps} steps (monitored, not asserted)")
    return run.series


def lambda_monotonicity(series: Sequence[DirectState]) -> Dict:
    lambdas = np.array([state.lambda_t for state in series])
    rel = np.diff(lambdas) / np.maximum(lambdas[:-1], 1e-300)
    return {
        "max_relative_increase": float(np.max(rel, initial=0.0)),
        "nonincreasing": bool(np.all(rel <= LAMBDA_MONOTONE_TOL)),
    }


def direct_rows(series: Sequence[DirectState], params: FlowParams) -> List[list]:
    """CSV rows t, lambda, max_u, min_u_interior, constraint_residual, s, gamma"""
    return [
        [state.t, state.lambda_t, state.u.max(), state.min_interior(),
         state.constraint_residual(params), state.s, state.gamma]
        for state in series
    ]


DIRECT_COLUMNS = ["t", "lambda", "max_u", "min_u_interior", "constraint_residual", "s", "gamma"]


def cross_validate(direct: DirectRun, time_map: TimeMap, store: SnapshotStore,
                   op: Optional[PLaplacianOp] = None) -> Dict:
    """
    Compare the direct run with the rescaled prototype run at every shared sample time

    Returns:
        Report with the largest L^{q+1} distance and the largest relative lambda gap
    """
    if direct.grid != store.grid:
        raise GeometryError("direct run and prototype store live on different grids")
    params = direct.params
    op = op or direct.op
    r = params.q + 1.0
    rows = []
    for state in direct.series:
        if state.t > time_map.t_end:
            break
        rescaled = rescale_solution(store, time_map, state.t, op)
        distance = lr_norm(Field(direct.grid, state.u.values - rescaled.u.values), r)
        lam_gap = abs(state.lambda_t - rescaled.lambda_t) / max(rescaled.lambda_t, 1e-300)
        rows.append({"t": state.t, "distance": distance, "lambda_gap": lam_gap,
                     "lambda_direct": state.lambda_t, "lambda_rescaled": rescaled.lambda_t})
    report = {
        "samples": rows,
        "max_distance": max((row["distance"] for row in rows), default=float("nan")),
        "max_lambda_gap": max((row["lambda_gap"] for row in rows), default=float("nan")),
    }
    logger.info(
        f"Cross-validation over {len(rows)} samples: distance {report['max_distance']:.3e}, "
        f"lambda gap {report['max_lambda_gap']:.3e}"
    )
    return report


def joint_refinement_slope(levels: Sequence[Tuple[float, Dict]]) -> Optional[float]:
    """Slope of the cross-validation distance under joint (dt, h) refinement, levels as (h, report)"""
    return convergence_slope([h for h, _ in levels], [rep["max_distance"] for _, rep in levels])
