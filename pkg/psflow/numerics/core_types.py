"""
Exponent bookkeeping, grid geometry and field storage shared by all solvers
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from numerics.exceptions import (
    DataIntegrityError,
    DegenerateInitialDataError,
    GeometryError,
    ParameterDomainError,
)

logger = logging.getLogger(__name__)

# Default tolerances; newton_tol is relative to the v^q scale of the step
DEFAULT_NEWTON_TOL = 1e-10
DEFAULT_QUAD_TOL = 1e-12
DEFAULT_EXTINCTION_EPS = 1e-8
NEGATIVITY_TOL = 1e-12


@dataclass(frozen=True)
class FlowParams:
    """
    Exponents of the flow and the numerical tolerances.

    All exponent arithmetic goes through this object: p_star = np/(n-p),
    q = p_star - 1 and q1p = q + 1 - p.
    """
    n: int
    p: float
    newton_tol: float = DEFAULT_NEWTON_TOL
    quad_tol: float = DEFAULT_QUAD_TOL
    extinction_eps: float = DEFAULT_EXTINCTION_EPS

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise ParameterDomainError(f"n must be an integer, got {self.n!r}")
        if self.n < 3:
            raise ParameterDomainError(f"n must satisfy n >= 3, got n={self.n}")
        if not math.isfinite(self.p) or not (2.0 <= self.p < self.n):
            raise ParameterDomainError(f"p must satisfy 2 <= p < n={self.n}, got p={self.p}")
        for name in ("newton_tol", "quad_tol", "extinction_eps"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ParameterDomainError(f"{name} must be a positive finite number, got {value}")

    @property
    def p_star(self) -> float:
        return self.n * self.p / (self.n - self.p)

    @property
    def q(self) -> float:
        return self.p_star - 1.0

    @property
    def q1p(self) -> float:
        return self.q + 1.0 - self.p

    @property
    def kappa(self) -> float:
        """Exponent of gamma in ds/dt = gamma^((q+1)p/n); equals q + 1 - p."""
        return (self.q + 1.0) * self.p / self.n

    def describe(self) -> dict:
        return {
            "n": int(self.n),
            "p": float(self.p),
            "p_star": self.p_star,
            "q": self.q,
            "q1p": self.q1p,
            "newton_tol": self.newton_tol,
            "quad_tol": self.quad_tol,
            "extinction_eps": self.extinction_eps,
        }


def make_params(n: int, p: float, **tolerances) -> FlowParams:
    """
    Build FlowParams from the dimension parameter and the exponent p

    Args:
        n: Dimension parameter of the equation (n >= 3)
        p: Exponent of the p-Laplacian (2 <= p < n)
        **tolerances: Optional newton_tol, quad_tol, extinction_eps

    Returns:
        Validated FlowParams

    Raises:
        ParameterDomainError: If n or p lies outside the admissible range
    """
    params = FlowParams(n=n, p=float(p), **tolerances)
    logger.debug(f"FlowParams n={params.n} p={params.p} p*={params.p_star} q={params.q}")
    return params


class GridMode(str, Enum):
    CARTESIAN_1D = "cartesian_1d"
    CARTESIAN_2D = "cartesian_2d"
    RADIAL = "radial"


def unit_sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n"""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class Grid:
    """
    Uniform node-centred grid on an interval, a rectangle or a ball (radial).

    Cartesian modes carry Dirichlet nodes on every side. Radial mode has a
    single axis r in [0, R]: r = 0 is a symmetry node, r = R is Dirichlet.
    """
    mode: GridMode
    extent: Tuple[float, ...]
    points: Tuple[int, ...]
    radial_dim: Optional[int] = None

    def __post_init__(self):
        axes = 2 if self.mode == GridMode.CARTESIAN_2D else 1
        if len(self.extent) != axes or len(self.points) != axes:
            raise GeometryError(
                f"{self.mode.value} grid needs {axes} extent/points entries, "
                f"got extent={self.extent} points={self.points}"
            )
        for ext, pts in zip(self.extent, self.points):
            if not (ext > 0.0 and math.isfinite(ext)):
                raise GeometryError(f"extent must be positive and finite, got {ext}")
            if pts < 3:
                raise GeometryError(f"every axis needs at least 3 points, got {pts}")
        if self.mode == GridMode.RADIAL:
            if self.radial_dim is None or self.radial_dim < 3:
                raise GeometryError(f"radial grid needs radial_dim >= 3, got {self.radial_dim}")
        elif self.radial_dim is not None:
            raise GeometryError("radial_dim is only meaningful in radial mode")

    @property
    def ndim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(n) for n in self.points)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(ext / (pts - 1) for ext, pts in zip(self.extent, self.points))

    @property
    def h(self) -> float:
        """Largest spacing over the axes"""
        return max(self.spacing)

    def coordinates(self) -> List[np.ndarray]:
        return [np.linspace(0.0, ext, pts) for ext, pts in zip(self.extent, self.points)]

    def mesh(self) -> List[np.ndarray]:
        return np.meshgrid(*self.coordinates(), indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.mode == GridMode.RADIAL:
            mask[-1] = True
            return mask
        mask[0, ...] = True
        mask[-1, ...] = True
        if self.ndim == 2:
            mask[:, 0] = True
            mask[:, -1] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def weights(self) -> np.ndarray:
        """Nodal quadrature weights of the discrete measure"""
        if self.mode == GridMode.RADIAL:
            h = self.spacing[0]
            n = self.radial_dim
            r = self.coordinates()[0]
            upper = np.minimum(r + 0.5 * h, self.extent[0])
            lower = np.maximum(r - 0.5 * h, 0.0)
            return unit_sphere_area(n) * (upper ** n - lower ** n) / n
        per_axis = []
        for h, pts in zip(self.spacing, self.points):
            w = np.full(pts, h)
            w[0] = w[-1] = 0.5 * h
            per_axis.append(w)
        if self.ndim == 1:
            return per_axis[0]
        return np.multiply.outer(per_axis[0], per_axis[1])

    def measure(self) -> float:
        return float(np.sum(self.weights()))

    def distance_from(self, center: Sequence[float]) -> np.ndarray:
        """Euclidean distance of every node from a point (radial: |r - center|)"""
        center = tuple(float(c) for c in center)
        if len(center) != self.ndim:
            raise GeometryError(f"center {center} does not match a {self.ndim}-axis grid")
        parts = [(axis - c) ** 2 for axis, c in zip(self.mesh(), center)]
        return np.sqrt(np.sum(parts, axis=0))

    def contains(self, point: Sequence[float]) -> bool:
        return all(0.0 <= float(x) <= ext for x, ext in zip(point, self.extent))

    def describe(self) -> dict:
        return {
            "mode": self.mode.value,
            "extent": list(self.extent),
            "points": list(self.points),
            "radial_dim": self.radial_dim,
        }


def make_grid(mode: str, extent: Sequence[float], points: Sequence[int],
              radial_dim: Optional[int] = None) -> Grid:
    """Build a Grid from plain values (mode given by name)"""
    try:
        grid_mode = GridMode(mode)
    except ValueError:
        raise GeometryError(f"unknown grid mode {mode!r}; expected one of {[m.value for m in GridMode]}")
    return Grid(
        mode=grid_mode,
        extent=tuple(float(e) for e in extent),
        points=tuple(int(p) for p in points),
        radial_dim=radial_dim,
    )


@dataclass
class Field:
    """Grid-sampled scalar function; solution fields carry zero Dirichlet values"""
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GeometryError(
                f"field values have shape {self.values.shape}, grid expects {self.grid.shape}"
            )

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def max(self) -> float:
        return float(np.max(self.values))

    def min(self) -> float:
        return float(np.min(self.values))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def solution_violations(self, negativity_tol: float = NEGATIVITY_TOL) -> List[str]:
        """List the solution-field invariants this field breaks (empty if none)"""
        problems = []
        if not self.is_finite():
            problems.append("non-finite values")
        boundary = self.values[self.grid.boundary_mask()]
        if boundary.size and np.any(boundary != 0.0):
            problems.append(f"nonzero Dirichlet values (max {float(np.max(np.abs(boundary))):.3e})")
        if self.min() < -negativity_tol:
            problems.append(f"negative values (min {self.min():.3e})")
        return problems


@dataclass(frozen=True)
class Snapshot:
    s: float
    field: Field
    gamma: float
    grad_energy: float


@dataclass(frozen=True)
class LedgerRow:
    """One accepted prototype step (the first row describes the initial data)"""
    s: float
    gamma: float
    grad_energy: float
    max_v: float
    min_v: float
    ds: float
    newton_iters: int
    energy_residual: float
    dissipation: float = 0.0
    time_dissipation: float = 0.0
    clamp: float = 0.0

    COLUMNS = (
        "s", "gamma", "grad_energy", "max_v", "min_v", "ds", "newton_iters",
        "energy_residual", "dissipation", "time_dissipation", "clamp",
    )

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.COLUMNS]


class SnapshotStore:
    """
    Append-only trajectory of the prototype flow.

    Entries are strictly increasing in s with nonincreasing gamma. The ledger
    holds one row per accepted step, the entries only the recorded snapshots.
    """

    GAMMA_TOL = 1e-10

    def __init__(self, params: FlowParams, grid: Grid):
        self.params = params
        self.grid = grid
        self.entries: List[Snapshot] = []
        self.ledger: List[LedgerRow] = []
        self.extinction_time: Optional[float] = None
        self.extinction_threshold: Optional[float] = None
        self.violations: List[str] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, snapshot: Snapshot):
        if snapshot.field.grid != self.grid:
            raise GeometryError("snapshot grid does not match the store grid")
        if not snapshot.field.is_finite():
            raise DataIntegrityError(f"snapshot at s={snapshot.s} contains non-finite values")
        if self.entries:
            last = self.entries[-1]
            if not snapshot.s > last.s:
                raise DataIntegrityError(
                    f"snapshot times must increase strictly: {snapshot.s} after {last.s}"
                )
            if snapshot.gamma > last.gamma * (1.0 + self.GAMMA_TOL):
                raise DataIntegrityError(
                    f"gamma increased from {last.gamma:.17g} to {snapshot.gamma:.17g} at s={snapshot.s}"
                )
        self.entries.append(snapshot)

    def record(self, row: LedgerRow):
        if self.ledger and not row.s > self.ledger[-1].s:
            raise DataIntegrityError(f"ledger times must increase strictly: {row.s} after {self.ledger[-1].s}")
        self.ledger.append(row)

    def mark_extinct(self, s: float, threshold: float):
        last = self.entries[-1]
        if last.s != s or last.field.max() >= threshold:
            raise DataIntegrityError(
                f"extinction at s={s} needs a final snapshot below {threshold:.3e}"
            )
        self.extinction_time = float(s)
        self.extinction_threshold = float(threshold)

    @property
    def last(self) -> Snapshot:
        return self.entries[-1]

    def s_values(self) -> np.ndarray:
        return np.array([e.s for e in self.entries])

    def gammas(self) -> np.ndarray:
        return np.array([e.gamma for e in self.entries])

    def ledger_column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.ledger], dtype=float)


def check_same_grid(*fields: Field) -> Grid:
    grid = fields[0].grid
    for other in fields[1:]:
        if other.grid != grid:
            raise GeometryError(f"grid mismatch: {grid.describe()} vs {other.grid.describe()}")
    return grid


def integrate(grid: Grid, values: np.ndarray) -> float:
    """Quadrature of nodal values against the grid measure"""
    return float(np.sum(grid.weights() * values))


def normalize_initial(u0_raw: Field, params: FlowParams) -> Field:
    """
    Scale nonnegative initial data to unit L^{q+1} norm

    Args:
        u0_raw: Nonnegative field with zero boundary values
        params: Flow exponents (q is taken from here)

    Returns:
        u0_raw / ||u0_raw||_{q+1}

    Raises:
        DegenerateInitialDataError: If the field vanishes identically
        GeometryError: If the field has nonzero boundary values
    """
    values = u0_raw.values
    if not u0_raw.is_finite():
        raise DegenerateInitialDataError("initial data contains non-finite values")
    if np.min(values) < -NEGATIVITY_TOL:
        raise DegenerateInitialDataError(f"initial data must be nonnegative (min {np.min(values):.3e})")
    if np.any(values[u0_raw.grid.boundary_mask()] != 0.0):
        raise GeometryError("initial data must vanish on the Dirichlet boundary")
    values = np.maximum(values, 0.0)
    r = params.q + 1.0
    norm = integrate(u0_raw.grid, values ** r) ** (1.0 / r)
    if not norm > 0.0:
        raise DegenerateInitialDataError("initial data is identically zero")
    normalized = values / norm
    # one correction pass absorbs the rounding of the first division
    second = integrate(u0_raw.grid, normalized ** r) ** (1.0 / r)
    if abs(second - 1.0) > 0.0:
        normalized = normalized / second
    return Field(u0_raw.grid, normalized)
