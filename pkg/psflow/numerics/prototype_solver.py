"""
Implicit time integration of d_s(v^q) - Delta_p v = 0 with zero Dirichlet data.

Each backward Euler step is the minimiser of the strictly convex functional

    Phi(v) = sum_i w_i (|v_i|^(q+1)/(q+1) - b_i v_i) / ds + E(v)

with b = v_prev^q, so Newton with an Armijo line search on Phi converges
globally. The Newton systems are solved matrix-free with preconditioned CG.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse.linalg import LinearOperator, cg

from numerics.core_types import (
    Field,
    FlowParams,
    Grid,
    LedgerRow,
    Snapshot,
    SnapshotStore,
    integrate,
)
from numerics.exceptions import (
    DegenerateInitialDataError,
    GeometryError,
    IncompleteRunError,
    ParameterDomainError,
    StepFailureError,
)
from numerics.operators import PLaplacianOp, lr_norm

logger = logging.getLogger(__name__)

JACOBIAN_FLOOR = 1e-14
UNDERSHOOT_WARNING = 1e-8
MAX_PRINCIPLE_TOL = 1e-10
MONOTONE_TOL = 1e-10
ARMIJO_C1 = 1e-4


@dataclass
class StepResult:
    field: Field
    newton_iters: int
    residual: float
    clamp: float
    undershoot: bool = False


class ImplicitStepper:
    """
    Backward Euler solver for (v^q - b)/ds - Delta_p v = 0 on the free nodes.

    Args:
        op: p-Laplacian on the target grid
        max_newton: Newton iteration budget per step
        max_halvings: Line search halvings before the step is declared failed
    """

    def __init__(self, op: PLaplacianOp, max_newton: int = 60, max_halvings: int = 30):
        self.op = op
        self.params = op.params
        self.q = op.params.q
        self.tol = op.params.newton_tol
        self.max_newton = max_newton
        self.max_halvings = max_halvings
        self.free = op.free
        self.w = op.weights[op.free]

    def _full(self, v_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.op.grid.size)
        full[self.free] = v_free
        return full

    def _objective(self, v_free: np.ndarray, rhs: np.ndarray, ds: float) -> float:
        q = self.q
        local = np.sum(self.w * (np.abs(v_free) ** (q + 1.0) / (q + 1.0) - rhs * v_free)) / ds
        return float(local + self.op.energy(self._full(v_free)))

    def _gradient(self, v_free: np.ndarray, rhs: np.ndarray, ds: float) -> np.ndarray:
        odd = np.abs(v_free) ** (self.q - 1.0) * v_free
        return self.w * (odd - rhs) / ds + self.op.energy_gradient(self._full(v_free))[self.free]

    def _residual(self, grad: np.ndarray, ds: float, scale: float) -> float:
        """max |v^q - b - ds Delta_p v| relative to the size of b"""
        return float(np.max(np.abs(ds * grad / self.w), initial=0.0)) / scale

    def _direction(self, v_free: np.ndarray, grad: np.ndarray, ds: float) -> np.ndarray:
        q = self.q
        local = np.maximum(q * np.abs(v_free) ** (q - 1.0) / ds, JACOBIAN_FLOOR) * self.w
        full = self._full(v_free)
        free = self.free
        size = v_free.size

        def matvec(x):
            return local * x + self.op.hessian_matvec(full, self._full(x))[free]

        diag = local + self.op.hessian_diagonal(full)[free]
        jacobian = LinearOperator((size, size), matvec=matvec, dtype=float)
        preconditioner = LinearOperator((size, size), matvec=lambda x: x / diag, dtype=float)
        step, info = cg(jacobian, -grad, rtol=1e-2 * self.tol, atol=0.0,
                        maxiter=10 * size, M=preconditioner)
        if info != 0:
            logger.debug(f"CG stopped with info={info}")
        if not np.all(np.isfinite(step)) or np.dot(step, grad) >= 0.0:
            logger.debug("CG direction unusable; falling back to the preconditioned gradient")
            step = -grad / diag
        return step

    def solve(self, v_start: np.ndarray, rhs_q: np.ndarray, ds: float) -> StepResult:
        """
        Solve one implicit step for an arbitrary nonnegative right side b

        Args:
            v_start: Initial Newton iterate (full nodal array)
            rhs_q: The target b over all nodes (only free nodes are used)
            ds: Step size

        Returns:
            StepResult with the clamped field

        Raises:
            StepFailureError: If Newton does not reach newton_tol
        """
        if not ds > 0.0:
            raise ParameterDomainError(f"step size must be positive, got ds={ds}")
        grid = self.op.grid
        rhs = np.asarray(rhs_q, dtype=float).ravel()[self.free]
        scale = max(float(np.max(np.abs(rhs), initial=0.0)), np.finfo(float).tiny)
        v = np.asarray(v_start, dtype=float).ravel()[self.free].copy()

        grad = self._gradient(v, rhs, ds)
        residual = self._residual(grad, ds, scale)
        phi = self._objective(v, rhs, ds)
        iters = 0
        while residual > self.tol:
            if iters >= self.max_newton:
                raise StepFailureError(
                    f"Newton did not converge in {iters} iterations (residual {residual:.3e})",
                    iterations=iters, residual=residual,
                )
            iters += 1
            direction = self._direction(v, grad, ds)
            slope = float(np.dot(grad, direction))
            t = 1.0
            for _ in range(self.max_halvings + 1):
                trial = v + t * direction
                phi_trial = self._objective(trial, rhs, ds)
                if phi_trial <= phi + ARMIJO_C1 * t * slope:
                    break
                # near the minimiser Phi stalls at rounding level; accept if the gradient shrinks
                if abs(phi_trial - phi) <= 1e-14 * max(abs(phi), 1.0):
                    trial_grad = self._gradient(trial, rhs, ds)
                    if np.linalg.norm(trial_grad) < np.linalg.norm(grad):
                        break
                t *= 0.5
            else:
                raise StepFailureError(
                    f"line search failed after {self.max_halvings} halvings (residual {residual:.3e})",
                    iterations=iters, residual=residual,
                )
            v, phi = trial, phi_trial
            grad = self._gradient(v, rhs, ds)
            residual = self._residual(grad, ds, scale)
            logger.debug(f"Newton {iters}: residual={residual:.3e} t={t:.3e}")

        undershoot = float(-min(np.min(v, initial=0.0), 0.0))
        if undershoot > UNDERSHOOT_WARNING:
            logger.warning(f"implicit step undershoot {undershoot:.3e} before clamping (ds={ds:.3e})")
        v = np.maximum(v, 0.0)
        return StepResult(
            field=Field(grid, self._full(v).reshape(grid.shape)),
            newton_iters=iters,
            residual=residual,
            clamp=undershoot,
            undershoot=undershoot > UNDERSHOOT_WARNING,
        )

    def step(self, v_prev: Field, ds: float) -> StepResult:
        if v_prev.grid != self.op.grid:
            raise GeometryError("field grid does not match the stepper grid")
        rhs = np.abs(v_prev.values) ** self.q
        return self.solve(v_prev.values, rhs, ds)


def step_prototype(op: PLaplacianOp, v_prev: Field, ds: float) -> Field:
    """One backward Euler step of the prototype flow"""
    return ImplicitStepper(op).step(v_prev, ds).field


@dataclass
class PrototypeRun:
    """
    Configuration and outcome of one run toward extinction.

    ds is bounded by [ds_min, ds_max] and by step_scale * gamma^(q+1-p).
    Fixed-step runs use ds_min == ds_max. A snapshot is recorded every
    snapshot_every accepted steps and whenever s crosses a multiple of
    snapshot_interval (if positive). s_stop ends the run early without error.
    """
    params: FlowParams
    grid: Grid
    u0: Field
    ds_init: float = 1e-3
    ds_min: float = 1e-7
    ds_max: float = 1e-2
    step_scale: float = 1e-2
    energy_budget: float = 1e-3
    snapshot_every: int = 1
    snapshot_interval: float = 0.0
    max_steps: int = 200_000
    s_stop: Optional[float] = None
    store: Optional[SnapshotStore] = None
    op: Optional[PLaplacianOp] = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.ds_min <= self.ds_init <= self.ds_max):
            raise ParameterDomainError(
                f"need 0 < ds_min <= ds_init <= ds_max, got {self.ds_min}, {self.ds_init}, {self.ds_max}"
            )
        if self.snapshot_every < 1:
            raise ParameterDomainError("snapshot_every must be at least 1")
        if self.u0.grid != self.grid:
            raise GeometryError("initial data lives on a different grid")
        if self.op is None:
            self.op = PLaplacianOp(self.params, self.grid)

    @property
    def fixed_step(self) -> bool:
        return self.ds_min == self.ds_max


def _step_energy_residual(q: float, gamma_prev: float, gamma_next: float,
                          grad_prev: float, grad_next: float, ds: float) -> float:
    return (gamma_next ** (q + 1.0) + (q + 1.0) / q * 0.5 * ds * (grad_prev + grad_next)
            - gamma_prev ** (q + 1.0))


def run_to_extinction(run: PrototypeRun) -> SnapshotStore:
    """
    Integrate the prototype flow until max v drops below the extinction threshold

    Args:
        run: PrototypeRun with normalized nonnegative initial data

    Returns:
        The filled SnapshotStore (also attached to run.store)

    Raises:
        IncompleteRunError: If max_steps is reached first; carries the partial store
        StepFailureError: If a step fails at ds_min
    """
    params, grid, op = run.params, run.grid, run.op
    q, r = params.q, params.q + 1.0
    u0 = run.u0
    if u0.max() <= 0.0:
        raise DegenerateInitialDataError("initial data must be positive somewhere")
    threshold = params.extinction_eps * u0.max()
    stepper = ImplicitStepper(op)

    store = SnapshotStore(params, grid)
    run.store = store
    gamma = lr_norm(u0, r)
    grad = op.grad_p_energy(u0)
    store.append(Snapshot(0.0, u0.copy(), gamma, grad))
    store.record(LedgerRow(0.0, gamma, grad, u0.max(), u0.min(), 0.0, 0, 0.0))

    v = u0.copy()
    s = 0.0
    ds = run.ds_init
    dissipation = 0.0
    steps = 0
    next_mark = run.snapshot_interval if run.snapshot_interval > 0.0 else np.inf
    logger.info(
        f"Prototype run on {grid.mode.value} {grid.shape}: q={q:g}, threshold={threshold:.3e}, ds0={ds:.3e}"
    )

    while True:
        if run.s_stop is not None and s >= run.s_stop * (1.0 - 1e-14):
            logger.info(f"Stopped at s={s:.6g} after {steps} steps (s_stop reached)")
            if store.last.s != s:
                store.append(Snapshot(s, v.copy(), gamma, grad))
            return store
        if steps >= run.max_steps:
            if store.last.s != s:
                store.append(Snapshot(s, v.copy(), gamma, grad))
            raise IncompleteRunError(
                f"step cap {run.max_steps} reached at s={s:.6g} with max v={v.max():.3e}", store=store
            )

        if run.s_stop is not None:
            ds = min(ds, run.s_stop - s)
        try:
            result = stepper.step(v, ds)
        except StepFailureError as exc:
            if run.fixed_step or ds <= run.ds_min:
                raise
            ds = max(0.5 * ds, run.ds_min)
            logger.debug(f"step rejected at s={s:.6g} ({exc}); ds -> {ds:.3e}")
            continue

        v_next = result.field
        gamma_next = lr_norm(v_next, r)
        grad_next = op.grad_p_energy(v_next)
        residual = _step_energy_residual(q, gamma, gamma_next, grad, grad_next, ds)
        if abs(residual) > run.energy_budget and not run.fixed_step and ds > run.ds_min:
            ds = max(0.5 * ds, run.ds_min)
            logger.debug(f"energy residual {residual:.3e} over budget at s={s:.6g}; ds -> {ds:.3e}")
            continue
        if abs(residual) > run.energy_budget:
            logger.warning(f"energy residual {residual:.3e} exceeds budget at fixed ds={ds:.3e}")

        _check_step(store, s + ds, v, v_next, gamma, gamma_next, grad, grad_next)

        dq = (np.abs(v_next.values) ** q - np.abs(v.values) ** q) / ds
        time_dissipation = ds * integrate(grid, dq * dq)
        dissipation += (q + 1.0) / q * 0.5 * ds * (grad + grad_next)
        s += ds
        steps += 1
        store.record(LedgerRow(
            s, gamma_next, grad_next, v_next.max(), v_next.min(), ds, result.newton_iters,
            residual, dissipation, time_dissipation, result.clamp,
        ))
        v, gamma, grad = v_next, gamma_next, grad_next

        extinct = v.max() < threshold
        crossed = s >= next_mark * (1.0 - 1e-12)
        if crossed:
            while next_mark <= s * (1.0 + 1e-12):
                next_mark += run.snapshot_interval
        if extinct or crossed or steps % run.snapshot_every == 0:
            store.append(Snapshot(s, v.copy(), gamma, grad))
        if extinct:
            store.mark_extinct(s, threshold)
            logger.info(f"Extinction at S*={s:.10g} after {steps} steps")
            return store

        if not run.fixed_step:
            ds = min(1.2 * ds, run.ds_max, run.step_scale * gamma ** params.q1p)
            ds = max(ds, run.ds_min)


def _check_step(store: SnapshotStore, s: float, v: Field, v_next: Field,
                gamma: float, gamma_next: float, grad: float, grad_next: float):
    """Record maximum principle and monotonicity violations for one accepted step"""
    problems = []
    if v_next.min() < -1e-12:
        problems.append(f"min v {v_next.min():.3e} below zero")
    if v_next.max() > v.max() + MAX_PRINCIPLE_TOL:
        problems.append(f"max v grew from {v.max():.17g} to {v_next.max():.17g}")
    if gamma_next > gamma * (1.0 + MONOTONE_TOL):
        problems.append(f"gamma grew from {gamma:.17g} to {gamma_next:.17g}")
    if grad_next > grad * (1.0 + MONOTONE_TOL):
        problems.append(f"gradient energy grew from {grad:.17g} to {grad_next:.17g}")
    for problem in problems:
        message = f"s={s:.10g}: {problem}"
        logger.warning(message)
        store.violations.append(message)


def energy_balance_report(store: SnapshotStore) -> List[Tuple[Tuple[float, float], float]]:
    """
    Energy balance residuals between consecutive snapshots

    R(s1, s2) = |v(s2)|^(q+1) + (q+1)/q int_{s1}^{s2} |grad v|_p^p ds - |v(s1)|^(q+1),
    with the time integral taken by the trapezoidal rule over every ledger row.

    Returns:
        List of ((s1, s2), R); empty for a single snapshot
    """
    if len(store.entries) < 2:
        return []
    q = store.params.q
    ledger_s = store.ledger_column("s")
    ledger_grad = store.ledger_column("grad_energy")
    report = []
    for first, second in zip(store.entries[:-1], store.entries[1:]):
        lo = int(np.searchsorted(ledger_s, first.s))
        hi = int(np.searchsorted(ledger_s, second.s)) + 1
        integral = float(trapezoid(ledger_grad[lo:hi], ledger_s[lo:hi]))
        residual = second.gamma ** (q + 1.0) + (q + 1.0) / q * integral - first.gamma ** (q + 1.0)
        report.append(((first.s, second.s), residual))
    return report


def time_dissipation_report(store: SnapshotStore) -> dict:
    """
    Accumulated sum ds |d_s v^q|_2^2 against |u0|_inf^(q-1) |grad u0|_p^p.

    The ratio is the observed constant of the estimate; it is monitored only.
    """
    q = store.params.q
    first = store.entries[0]
    total = float(np.sum(store.ledger_column("time_dissipation")))
    scale = first.field.max() ** (q - 1.0) * first.grad_energy
    ratio = total / scale if scale > 0.0 else float("nan")
    return {"time_dissipation": total, "reference": scale, "constant": ratio}
