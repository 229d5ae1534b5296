"""
Talenti profiles, separable comparison supersolutions and the extinction-time bound
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from numerics.core_types import Field, FlowParams, Grid, GridMode, SnapshotStore
from numerics.exceptions import GeometryError, ParameterDomainError
from numerics.operators import PLaplacianOp

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("sobolev", "printed")


def talenti_constant(params: FlowParams) -> float:
    """c = n ((n-p)/(p-1))^(p-1), the constant tying a and b in the Talenti family"""
    n, p = params.n, params.p
    return n * ((n - p) / (p - 1.0)) ** (p - 1.0)


@dataclass(frozen=True)
class TalentiProfile:
    """
    Radial profile Y centred at `center` with scale lam, plus the separable
    time factor Z(s) with constant mu < 0 and initial value Z0.

    normalization "sobolev" solves -Delta_p Y = Y^q for every admissible (n, p);
    "printed" keeps the prefactor c^(1/p)/lam, which solves it only when n = 2p.
    """
    params: FlowParams
    lam: float = 1.0
    center: Tuple[float, ...] = (0.0,)
    mu: float = -1.0
    Z0: Optional[float] = None
    normalization: str = "sobolev"

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ParameterDomainError(f"Talenti scale must be positive, got lam={self.lam}")
        if not self.mu < 0.0:
            raise ParameterDomainError(f"separation constant must be negative, got mu={self.mu}")
        if self.Z0 is not None and not self.Z0 > 0.0:
            raise ParameterDomainError(f"Z0 must be positive, got {self.Z0}")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterDomainError(
                f"unknown normalization {self.normalization!r}; expected one of {NORMALIZATIONS}"
            )

    @property
    def amplitude(self) -> float:
        c = talenti_constant(self.params)
        p, n = self.params.p, self.params.n
        if self.normalization == "printed":
            return c ** (1.0 / p) / self.lam
        return (c ** (1.0 / p) / self.lam) ** ((n - p) / p)

    def at_distance(self, r: np.ndarray) -> np.ndarray:
        p, n = self.params.p, self.params.n
        conj = p / (p - 1.0)
        r = np.abs(np.asarray(r, dtype=float))
        return self.amplitude * (1.0 + (r / self.lam) ** conj) ** (-(n - p) / p)

    def on_grid(self, grid: Grid) -> np.ndarray:
        return self.at_distance(grid.distance_from(self.center))

    def family_parameters(self) -> Tuple[float, float]:
        """(a, b) with Y = (a + b |x - y|^(p/(p-1)))^(-(n-p)/p)"""
        p, n = self.params.p, self.params.n
        a = self.amplitude ** (-p / (n - p))
        b = a * self.lam ** (-p / (p - 1.0))
        return a, b


def talenti_value(prof: TalentiProfile, x: Sequence[float]) -> float:
    """Y at a single point x"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    center = np.asarray(prof.center, dtype=float)
    if x.shape != center.shape:
        raise GeometryError(f"point {tuple(x)} does not match the profile centre {prof.center}")
    return float(prof.at_distance(np.linalg.norm(x - center)))


def talenti_family_value(params: FlowParams, a: float, b: float,
                         center: Sequence[float], x: Sequence[float]) -> float:
    """General Talenti function (a + b |x - y|^(p/(p-1)))^(-(n-p)/p)"""
    if not (a > 0.0 and b > 0.0):
        raise ParameterDomainError(f"Talenti family needs a, b > 0, got a={a}, b={b}")
    p, n = params.p, params.n
    r = np.linalg.norm(np.atleast_1d(np.asarray(x, float)) - np.atleast_1d(np.asarray(center, float)))
    return float((a + b * r ** (p / (p - 1.0))) ** (-(n - p) / p))


def family_pde_constant(params: FlowParams, a: float, b: float) -> float:
    """c a b^(p-1); the family solves -Delta_p Y = Y^q exactly when this equals 1"""
    return talenti_constant(params) * a * b ** (params.p - 1.0)


def z_profile(Z0: float, mu: float, s, params: FlowParams):
    """
    Separable time factor Z(s) = Z0 (1 + mu (q+1-p)/q Z0^(p-q-1) s)_+^(1/(q+1-p))

    Solves (Z^q)' = mu Z^(p-1) and vanishes identically after z_vanishing_time.
    """
    if not mu < 0.0:
        raise ParameterDomainError(f"separation constant must be negative, got mu={mu}")
    if not Z0 > 0.0:
        raise ParameterDomainError(f"Z0 must be positive, got {Z0}")
    q, q1p = params.q, params.q1p
    inner = 1.0 + mu * (q1p / q) * Z0 ** (-q1p) * np.asarray(s, dtype=float)
    value = Z0 * np.maximum(inner, 0.0) ** (1.0 / q1p)
    return float(value) if np.ndim(value) == 0 else value


def z_vanishing_time(Z0: float, mu: float, params: FlowParams) -> float:
    if not mu < 0.0:
        raise ParameterDomainError(f"separation constant must be negative, got mu={mu}")
    return (q_over_q1p(params) * Z0 ** params.q1p) / (-mu)


def q_over_q1p(params: FlowParams) -> float:
    return params.q / params.q1p


def profile_minimum(prof: TalentiProfile, grid: Grid) -> float:
    """
    min of Y over the grid; checked to sit at the node farthest from the centre

    Raises:
        GeometryError: If the centre lies outside the domain
    """
    if grid.mode == GridMode.RADIAL:
        if any(c != 0.0 for c in prof.center):
            raise GeometryError("radial grids need the profile centred at the origin")
    elif not grid.contains(prof.center):
        raise GeometryError(f"profile centre {prof.center} lies outside the domain")
    distance = grid.distance_from(prof.center)
    values = prof.at_distance(distance)
    where_min = np.unravel_index(np.argmin(values), values.shape)
    where_far = np.unravel_index(np.argmax(distance), distance.shape)
    if values[where_min] < values[where_far] or distance[where_min] < distance[where_far]:
        raise GeometryError(
            f"Talenti minimum at {where_min} is not at the farthest node {where_far}"
        )
    return float(values[where_min])


def extinction_bound(u0: Field, prof: TalentiProfile) -> float:
    """(q/(q+1-p)) (max u0 / min Y)^(q+1-p) with min Y taken over the grid"""
    params = prof.params
    ratio = u0.max() / profile_minimum(prof, u0.grid)
    return q_over_q1p(params) * ratio ** params.q1p


def with_initial_data(prof: TalentiProfile, u0: Field) -> TalentiProfile:
    """Profile with Z0 = (max u0 / min Y) (-mu)^(1/(q+1-p)), so that V(., 0) >= u0"""
    ratio = u0.max() / profile_minimum(prof, u0.grid)
    return replace(prof, Z0=ratio * (-prof.mu) ** (1.0 / prof.params.q1p))


def _require_z0(prof: TalentiProfile) -> float:
    if prof.Z0 is None:
        raise ParameterDomainError("profile has no Z0; build it with with_initial_data")
    return prof.Z0


def comparison_supersolution(prof: TalentiProfile, x: Sequence[float], s: float) -> float:
    """V(x, s) = (-mu)^(-1/(q+1-p)) Y(x) Z(s)"""
    z0 = _require_z0(prof)
    scale = (-prof.mu) ** (-1.0 / prof.params.q1p)
    return scale * talenti_value(prof, x) * z_profile(z0, prof.mu, s, prof.params)


def supersolution_on_grid(prof: TalentiProfile, grid: Grid, s: float) -> np.ndarray:
    z0 = _require_z0(prof)
    scale = (-prof.mu) ** (-1.0 / prof.params.q1p)
    return scale * prof.on_grid(grid) * z_profile(z0, prof.mu, s, prof.params)


def _interior_away_from_centre(grid: Grid, distance: np.ndarray, r_min: float) -> np.ndarray:
    return grid.interior_mask() & (distance >= r_min)


def pde_residual(prof: TalentiProfile, op: PLaplacianOp, r_min: float = 0.0) -> float:
    """Sup norm of -Delta_p Y - Y^q over interior nodes at distance >= r_min from the centre"""
    grid = op.grid
    distance = grid.distance_from(prof.center)
    y = Field(grid, prof.at_distance(distance))
    residual = -op.apply(y).values - y.values ** prof.params.q
    mask = _interior_away_from_centre(grid, distance, r_min)
    return float(np.max(np.abs(residual[mask]), initial=0.0))


def supersolution_residual(prof: TalentiProfile, op: PLaplacianOp, s: float,
                           r_min: float = 0.0) -> float:
    """Sup norm of d_s(V^q) - Delta_p V at time s, d_s taken from the closed form of Z"""
    params = prof.params
    z0 = _require_z0(prof)
    grid = op.grid
    z = z_profile(z0, prof.mu, s, params)
    scale = (-prof.mu) ** (-1.0 / params.q1p)
    distance = grid.distance_from(prof.center)
    y = prof.at_distance(distance)
    v = Field(grid, scale * y * z)
    dvq = scale ** params.q * y ** params.q * prof.mu * z ** (params.p - 1.0)
    residual = dvq - op.apply(v).values
    mask = _interior_away_from_centre(grid, distance, r_min)
    return float(np.max(np.abs(residual[mask]), initial=0.0))


def comparison_check(store: SnapshotStore, prof: TalentiProfile, collar: int = 1) -> Dict:
    """
    Largest excess of v over V(., s) across snapshots, away from a boundary collar

    Returns:
        Dict with max_excess (<= 0 means v <= V everywhere checked) and per-snapshot rows
    """
    grid = store.grid
    mask = collar_mask(grid, collar)
    rows: List[Dict] = []
    worst = -np.inf
    for entry in store.entries:
        bound = supersolution_on_grid(prof, grid, entry.s)
        excess = float(np.max((entry.field.values - bound)[mask], initial=-np.inf))
        rows.append({"s": entry.s, "excess": excess})
        worst = max(worst, excess)
    logger.info(f"Comparison check over {len(rows)} snapshots: max excess {worst:.3e}")
    return {"max_excess": worst, "collar": collar, "snapshots": rows}


def collar_mask(grid: Grid, collar: int) -> np.ndarray:
    """Nodes at least collar + 1 cells away from the Dirichlet boundary"""
    mask = grid.interior_mask()
    if collar <= 0:
        return mask
    if grid.mode == GridMode.RADIAL:
        mask[-1 - collar:] = False
        return mask
    for axis in range(grid.ndim):
        index = [slice(None)] * grid.ndim
        index[axis] = slice(0, collar + 1)
        mask[tuple(index)] = False
        index[axis] = slice(-collar - 1, None)
        mask[tuple(index)] = False
    return mask


def talenti_table(prof: TalentiProfile, grid: Grid, s_values: Sequence[float]) -> Tuple[List[str], List[list]]:
    """Rows (r, Y, V at each requested s) sampled along the grid's first axis from the centre"""
    r = np.abs(grid.coordinates()[0] - prof.center[0])
    header = ["r", "Y"] + [f"V_at_{s:g}" for s in s_values]
    y = prof.at_distance(r)
    columns = [r, y]
    if s_values:
        z0 = _require_z0(prof)
        scale = (-prof.mu) ** (-1.0 / prof.params.q1p)
        columns += [scale * y * z_profile(z0, prof.mu, s, prof.params) for s in s_values]
    rows = [list(map(float, row)) for row in zip(*columns)]
    return header, rows
