"""
Nonlinear intrinsic scaling: time reparametrisation of a finished prototype run
and reconstruction of the volume-constrained solution u(t) = v(s(t)) / gamma(t).
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import PchipInterpolator

from numerics.core_types import Field, FlowParams, GridMode, SnapshotStore, integrate
from numerics.exceptions import (
    DataIntegrityError,
    IntegratorInconsistencyError,
    ParameterDomainError,
    TimeRangeError,
)
from numerics.operators import PLaplacianOp, lr_norm

logger = logging.getLogger(__name__)

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
ROUTE_TOLERANCE = 1e-6
GAMMA_MONOTONE_TOL = 1e-10
DEFAULT_END_FRACTION = 0.99
DRIFT_WARNING = 1e-6


class GammaInterpolant:
    """
    Monotone piecewise-cubic gamma(s) through the ledger samples; zero beyond S*
    """

    def __init__(self, s_nodes: np.ndarray, gamma_nodes: np.ndarray, S_star: float):
        self.s_nodes = np.asarray(s_nodes, dtype=float)
        self.gamma_nodes = np.asarray(gamma_nodes, dtype=float)
        self.S_star = float(S_star)
        self._pchip = PchipInterpolator(self.s_nodes, self.gamma_nodes, extrapolate=False)
        self._slope = self._pchip.derivative()

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.clip(s, 0.0, self.S_star)
        value = np.where(s >= self.S_star, 0.0, self._pchip(inside))
        return float(value) if value.ndim == 0 else value

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.clip(s, 0.0, self.S_star)
        value = np.where(s >= self.S_star, 0.0, self._slope(inside))
        return float(value) if value.ndim == 0 else value


def build_gamma_interpolant(store: SnapshotStore) -> GammaInterpolant:
    """
    Interpolate gamma(s) from every ledger row of a completed run

    Raises:
        TimeRangeError: If the store never reached extinction (names the last valid s)
        DataIntegrityError: If stored gamma increases by more than 1e-10
    """
    if store.extinction_time is None:
        last = store.ledger[-1].s if store.ledger else 0.0
        raise TimeRangeError(
            f"prototype store has no extinction time; last valid s={last:.17g}"
        )
    s = store.ledger_column("s")
    gamma = store.ledger_column("gamma")
    jumps = np.diff(gamma)
    if np.any(jumps > GAMMA_MONOTONE_TOL):
        at = int(np.argmax(jumps))
        raise DataIntegrityError(
            f"gamma increases by {jumps[at]:.3e} between s={s[at]:.17g} and s={s[at + 1]:.17g}"
        )
    return GammaInterpolant(s, gamma, store.extinction_time)


@dataclass
class TimeMap:
    """
    Samples of Lambda, g and s(t) on a t grid, from both integration routes.

    s is the (Lambda, g) route; s_collapsed integrates ds/dt = gamma(s)^kappa.
    """
    params: FlowParams
    S_star: float
    t: np.ndarray
    tau: np.ndarray
    Lambda: np.ndarray
    s: np.ndarray
    s_collapsed: np.ndarray
    gamma: np.ndarray
    discrepancy: float
    interpolant: GammaInterpolant = field(repr=False)
    dense_s: Any = field(default=None, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def s_at(self, t: float) -> float:
        if not (0.0 <= t <= self.t_end * (1.0 + 1e-14)):
            raise TimeRangeError(f"t={t} outside the computed range [0, {self.t_end}]")
        if t == 0.0:
            return 0.0
        return float(self.dense_s(min(t, self.t_end))[0])

    def gamma_at(self, t: float) -> float:
        return self.interpolant(self.s_at(t))

    def rows(self) -> List[list]:
        return [list(map(float, r)) for r in zip(self.t, self.tau, self.Lambda, self.s, self.gamma)]


def _collapsed_route(interp: GammaInterpolant, kappa: float, t_end: Optional[float],
                     s_end_fraction: float):
    S_star = interp.S_star

    def rhs(t, y):
        return [interp(y[0]) ** kappa]

    if t_end is None:
        def reach_end(t, y):
            return y[0] - s_end_fraction * S_star
        reach_end.terminal = True
        reach_end.direction = 1
        sol = solve_ivp(rhs, (0.0, 1e8), [0.0], method="RK45", rtol=ODE_RTOL, atol=ODE_ATOL,
                        events=reach_end, dense_output=True)
        if sol.status != 1:
            raise TimeRangeError(f"s(t) never reached {s_end_fraction} S*: {sol.message}")
        return sol, float(sol.t_events[0][0])
    sol = solve_ivp(rhs, (0.0, t_end), [0.0], method="RK45", rtol=ODE_RTOL, atol=ODE_ATOL,
                    dense_output=True)
    if not sol.success:
        raise TimeRangeError(f"collapsed time map failed: {sol.message}")
    return sol, t_end


def integrate_time_map(store: SnapshotStore, t_end: Optional[float] = None,
                       samples: int = 2001, interp: Optional[GammaInterpolant] = None,
                       s_end_fraction: float = DEFAULT_END_FRACTION) -> TimeMap:
    """
    Integrate Lambda'(tau) = gamma(S*(1 - e^-Lambda))^kappa / S*, g'(t) = e^Lambda(g(t))
    and, independently, ds/dt = gamma(s)^kappa

    Args:
        store: Completed prototype run
        t_end: Final time; by default the time at which s = s_end_fraction * S*
        samples: Number of t samples
        interp: Prebuilt gamma interpolant

    Returns:
        TimeMap with both routes sampled on a uniform t grid

    Raises:
        IntegratorInconsistencyError: If the routes disagree beyond 1e-6 relative in s
        TimeRangeError: If t_end maps beyond the stored run
    """
    if t_end is not None and not t_end > 0.0:
        raise ParameterDomainError(f"t_end must be positive, got {t_end}")
    params = store.params
    interp = interp or build_gamma_interpolant(store)
    S_star = interp.S_star
    kappa = params.kappa

    collapsed, t_end = _collapsed_route(interp, kappa, t_end, s_end_fraction)
    t = np.linspace(0.0, t_end, samples)
    s_collapsed = collapsed.sol(t)[0]
    s_collapsed[0] = 0.0
    s_end = float(s_collapsed[-1])
    if not s_end < S_star:
        raise TimeRangeError(f"t_end={t_end} reaches s={s_end} beyond S*={S_star}")

    lambda_target = np.log(S_star / (S_star - s_end))
    lambda_stop = lambda_target * 1.01 + 1e-6

    def lambda_rhs(tau, y):
        return [interp(S_star * (1.0 - np.exp(-y[0]))) ** kappa / S_star]

    def past_target(tau, y):
        return y[0] - lambda_stop
    past_target.terminal = True
    past_target.direction = 1

    lam_sol = solve_ivp(lambda_rhs, (0.0, 1e12), [0.0], method="RK45", rtol=ODE_RTOL,
                        atol=ODE_ATOL, events=past_target, dense_output=True)
    if lam_sol.status != 1:
        raise IntegratorInconsistencyError(f"Lambda never reached {lambda_stop:.6g}: {lam_sol.message}")
    tau_stop = float(lam_sol.t_events[0][0])

    def lambda_of(tau):
        return float(lam_sol.sol(min(max(tau, 0.0), tau_stop))[0])

    g_sol = solve_ivp(lambda t_, y: [np.exp(lambda_of(y[0]))], (0.0, t_end), [0.0],
                      method="RK45", rtol=ODE_RTOL, atol=ODE_ATOL, t_eval=t)
    if not g_sol.success:
        raise IntegratorInconsistencyError(f"g(t) integration failed: {g_sol.message}")
    tau = g_sol.y[0]
    Lambda = np.array([lambda_of(x) for x in tau])
    s = S_star * (1.0 - np.exp(-Lambda))

    scale = np.maximum(np.abs(s_collapsed), 1e-12 * S_star)
    discrepancy = float(np.max(np.abs(s - s_collapsed) / scale))
    logger.info(
        f"Time map to t_end={t_end:.6g}: s_end={s_end:.10g} of S*={S_star:.10g}, "
        f"route discrepancy {discrepancy:.3e}"
    )
    if discrepancy > ROUTE_TOLERANCE:
        raise IntegratorInconsistencyError(
            f"(Lambda, g) and collapsed routes disagree by {discrepancy:.3e} relative in s",
            discrepancy=discrepancy,
        )
    return TimeMap(
        params=params,
        S_star=S_star,
        t=t,
        tau=tau,
        Lambda=Lambda,
        s=s,
        s_collapsed=s_collapsed,
        gamma=np.asarray(interp(s)),
        discrepancy=discrepancy,
        interpolant=interp,
        dense_s=collapsed.sol,
    )


def time_map_identity(time_map: TimeMap, relative_step: float = 1e-4) -> Dict:
    """Central-difference ds/dt at the samples against gamma^kappa"""
    kappa = time_map.params.kappa
    delta = relative_step * time_map.t_end
    worst = 0.0
    for t in time_map.t[1:-1]:
        lo, hi = max(t - delta, 0.0), min(t + delta, time_map.t_end)
        slope = (time_map.s_at(hi) - time_map.s_at(lo)) / (hi - lo)
        target = time_map.gamma_at(t) ** kappa
        if target > 0.0:
            worst = max(worst, abs(slope - target) / target)
    return {"max_relative_error": worst, "route_discrepancy": time_map.discrepancy}


@dataclass
class RescaledState:
    t: float
    s: float
    u: Field
    lambda_t: float
    gamma_t: float
    drift: float
    constraint_residual: float


def interpolate_prototype(store: SnapshotStore, s: float) -> Field:
    """v(s) from adjacent snapshots, linear in v^q, then the q-th root"""
    s_values = store.s_values()
    if not (0.0 <= s <= s_values[-1]):
        raise TimeRangeError(f"s={s} outside the stored range [0, {s_values[-1]:.17g}]")
    q = store.params.q
    hi = int(np.searchsorted(s_values, s))
    if s_values[hi] == s:
        return store.entries[hi].field.copy()
    a, b = store.entries[hi - 1], store.entries[hi]
    theta = (s - a.s) / (b.s - a.s)
    vq = (1.0 - theta) * a.field.values ** q + theta * b.field.values ** q
    return Field(store.grid, np.maximum(vq, 0.0) ** (1.0 / q))


def rescale_solution(store: SnapshotStore, time_map: TimeMap, t: float,
                     op: Optional[PLaplacianOp] = None) -> RescaledState:
    """
    u(t) = v(s(t)) / gamma(t), renormalized to unit L^{q+1} norm

    Returns:
        RescaledState with lambda_t = |grad u|_p^p and the renormalization drift

    Raises:
        TimeRangeError: If t lies outside the map
    """
    params = store.params
    op = op or PLaplacianOp(params, store.grid)
    s = time_map.s_at(t)
    gamma_t = time_map.interpolant(s)
    v = interpolate_prototype(store, s)
    r = params.q + 1.0
    u_values = v.values / gamma_t
    norm = integrate(store.grid, u_values ** r) ** (1.0 / r)
    drift = norm - 1.0
    if abs(drift) > DRIFT_WARNING:
        logger.warning(f"renormalization drift {drift:.3e} at t={t:.6g} (s={s:.10g})")
    u = Field(store.grid, u_values / norm)
    return RescaledState(
        t=float(t), s=s, u=u, lambda_t=op.grad_p_energy(u), gamma_t=gamma_t,
        drift=drift, constraint_residual=abs(lr_norm(u, r) - 1.0),
    )


def lambda_identity(time_map: TimeMap, states: Sequence[RescaledState]) -> Dict:
    """
    Compare lambda_t = |grad u|_p^p with -q gamma'(t)/gamma(t), gamma' by central differences
    of the sampled map

    Returns:
        Dict with per-sample relative errors and the maximum
    """
    q = time_map.params.q
    t = time_map.t
    dgamma = np.gradient(time_map.gamma, t)
    errors = []
    for state in states:
        if state.t <= t[0] or state.t >= t[-1]:
            continue
        gamma = time_map.gamma_at(state.t)
        slope = float(np.interp(state.t, t, dgamma))
        target = -q * slope / gamma
        if state.lambda_t > 0.0:
            errors.append({"t": state.t, "lambda_t": state.lambda_t, "from_gamma": target,
                           "relative_error": abs(state.lambda_t - target) / state.lambda_t})
    worst = max((e["relative_error"] for e in errors), default=float("nan"))
    return {"max_relative_error": worst, "samples": errors}


def boundedness_check(u_series: Sequence[Tuple[float, Field, float]], u0: Field,
                      params: FlowParams, slack: float = 1e-6) -> Dict:
    """
    max u(t) <= exp((1/q) int_0^t lambda) max u0 (1 + slack) with trapezoidal quadrature

    Returns:
        Report with per-t rows and the list of violating t
    """
    if not u_series:
        raise ParameterDomainError("boundedness check needs a nonempty series")
    q = params.q
    times = np.array([t for t, _, _ in u_series])
    lambdas = np.array([lam for _, _, lam in u_series])
    rows, violations = [], []
    u0_max = u0.max()
    for k, (t, u, _) in enumerate(u_series):
        integral = float(trapezoid(lambdas[: k + 1], times[: k + 1])) if k else 0.0
        bound = np.exp(integral / q) * u0_max
        rows.append({"t": float(t), "max_u": u.max(), "bound": float(bound)})
        if u.max() > bound * (1.0 + slack):
            violations.append(float(t))
    if violations:
        logger.warning(f"boundedness bound violated at t={violations[:5]}")
    return {"rows": rows, "violations": violations, "passed": not violations}


def gamma_regularity_check(time_map: TimeMap, u0: Field, op: PLaplacianOp,
                           tolerance: float = 0.1) -> Dict:
    """
    Positivity floor c0 = min gamma and the Lipschitz bound
    |gamma'(t)| <= (c0^-q / q) |grad u0|_p^p max gamma^kappa
    """
    q, kappa = time_map.params.q, time_map.params.kappa
    gamma = time_map.gamma
    c0 = float(np.min(gamma))
    slopes = np.abs(np.diff(gamma) / np.diff(time_map.t))
    max_slope = float(np.max(slopes, initial=0.0))
    bound = c0 ** (-q) / q * op.grad_p_energy(u0) * float(np.max(gamma)) ** kappa
    return {
        "c0": c0,
        "max_slope": max_slope,
        "lipschitz_bound": bound,
        "passed": bool(c0 > 0.0 and max_slope <= bound * (1.0 + tolerance)),
    }


def _test_function(u0: Field) -> np.ndarray:
    """Smooth spatial test function vanishing on the Dirichlet boundary"""
    grid = u0.grid
    axes = grid.mesh()
    if grid.mode == GridMode.RADIAL:
        return np.cos(0.5 * np.pi * axes[0] / grid.extent[0])
    psi = np.ones(grid.shape)
    for x, ext in zip(axes, grid.extent):
        psi = psi * np.sin(np.pi * x / ext)
    psi[grid.boundary_mask()] = 0.0
    return psi


def weak_solution_contract(series: Sequence[Tuple[float, Field, float]], u0: Field,
                           params: FlowParams, op: Optional[PLaplacianOp] = None) -> Dict:
    """
    Runtime checks of the weak-solution contract on a sampled u series:
    finite energy and time dissipation, the tested weak form, the volume
    constraint and the boundary trace with continuity at t = 0.
    """
    op = op or PLaplacianOp(params, u0.grid)
    grid = u0.grid
    q, r, p = params.q, params.q + 1.0, params.p
    times = np.array([t for t, _, _ in series])
    fields = [u for _, u, _ in series]
    lambdas = np.array([lam for _, _, lam in series])

    energies = np.array([op.grad_p_energy(u) for u in fields])
    dissipation = 0.0
    for k in range(1, len(fields)):
        dt = times[k] - times[k - 1]
        dq = (fields[k].values ** q - fields[k - 1].values ** q) / dt
        dissipation += dt * integrate(grid, dq * dq)

    T = times[-1]
    psi = Field(grid, _test_function(u0))
    chi = (1.0 - times / T) ** 2
    dchi = -2.0 * (1.0 - times / T) / T
    mass = np.array([integrate(grid, u.values ** q * psi.values) for u in fields])
    flux = np.array([op.flux_pairing(u, psi) for u in fields])
    integrand = -mass * dchi + (flux - lambdas * mass) * chi
    initial = integrate(grid, u0.values ** q * psi.values)
    lhs = float(trapezoid(integrand, times))
    size = float(trapezoid(np.abs(mass * dchi) + (np.abs(flux) + np.abs(lambdas * mass)) * chi, times))
    weak_residual = abs(lhs - initial) / max(size + abs(initial), 1e-300)

    constraint = max(abs(lr_norm(u, r) - 1.0) for u in fields)
    trace = max(float(np.max(np.abs(u.values[grid.boundary_mask()]), initial=0.0)) for u in fields)
    early = []
    for t, u in zip(times[1:6], fields[1:6]):
        diff = Field(grid, u.values - u0.values)
        early.append(float(op.grad_p_energy(diff) ** (1.0 / p) + lr_norm(diff, p)))
    continuity = all(a <= b * (1.0 + 1e-9) + 1e-15 for a, b in zip(early[:-1], early[1:]))

    return {
        "sup_grad_energy": float(np.max(energies)),
        "time_dissipation": float(dissipation),
        "finite": bool(np.isfinite(energies).all() and np.isfinite(dissipation)),
        "weak_form_residual": float(weak_residual),
        "constraint_residual": float(constraint),
        "boundary_trace": trace,
        "early_distances": early,
        "continuous_at_zero": bool(continuity),
    }
