"""
Discrete p-Laplacian, gradient seminorms, L^r norms and the flux monotonicity probe.

Every geometry is reduced to a sparse discrete gradient G mapping nodal values
to element gradients (faces in 1D and radial mode, two right triangles per cell
in 2D) together with element measures m. The discrete energy is

    E(f) = sum_e m_e |G f|_e^p / p

and -Delta_p f at a free node i is dE/df_i divided by the nodal weight w_i.
Summation by parts therefore holds exactly and the Jacobian is symmetric.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from numerics.core_types import (
    Field,
    FlowParams,
    Grid,
    GridMode,
    integrate,
    unit_sphere_area,
)
from numerics.exceptions import GeometryError, ParameterDomainError

logger = logging.getLogger(__name__)


def _difference_matrix(points: int, h: float) -> sparse.csr_matrix:
    """Forward differences on consecutive nodes: (f[i+1] - f[i]) / h"""
    faces = points - 1
    rows = np.repeat(np.arange(faces), 2)
    cols = np.column_stack([np.arange(faces), np.arange(1, points)]).ravel()
    vals = np.tile([-1.0 / h, 1.0 / h], faces)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(faces, points))


def _triangle_gradients(grid: Grid) -> Tuple[List[sparse.csr_matrix], np.ndarray]:
    """P1 gradients on the lower and upper right triangle of every cell"""
    nx, ny = grid.shape
    hx, hy = grid.spacing
    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    ci = ci.ravel()
    cj = cj.ravel()
    cells = ci.size

    def node(i, j):
        return i * ny + j

    # lower triangle (i,j), (i+1,j), (i,j+1); upper triangle (i+1,j+1), (i,j+1), (i+1,j)
    x_pairs = [(node(ci, cj), node(ci + 1, cj)), (node(ci, cj + 1), node(ci + 1, cj + 1))]
    y_pairs = [(node(ci, cj), node(ci, cj + 1)), (node(ci + 1, cj), node(ci + 1, cj + 1))]

    def assemble(pairs, h):
        rows, cols, vals = [], [], []
        for offset, (lo, hi) in enumerate(pairs):
            element = np.arange(cells) + offset * cells
            rows += [element, element]
            cols += [lo, hi]
            vals += [np.full(cells, -1.0 / h), np.full(cells, 1.0 / h)]
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(2 * cells, nx * ny),
        )

    measures = np.full(2 * cells, 0.5 * hx * hy)
    return [assemble(x_pairs, hx), assemble(y_pairs, hy)], measures


class PLaplacianOp:
    """
    Face-flux p-Laplacian on a Grid.

    Args:
        params: Flow exponents (p, and n for radial grids)
        grid: Grid the operator acts on
    """

    def __init__(self, params: FlowParams, grid: Grid):
        if grid.mode == GridMode.RADIAL and grid.radial_dim != params.n:
            raise GeometryError(
                f"radial grid dimension {grid.radial_dim} does not match n={params.n}"
            )
        self.params = params
        self.grid = grid
        self.p = params.p

        if grid.mode == GridMode.CARTESIAN_2D:
            self.components, self.measures = _triangle_gradients(grid)
        else:
            (points,), (h,) = grid.shape, grid.spacing
            self.components = [_difference_matrix(points, h)]
            if grid.mode == GridMode.RADIAL:
                r_face = (np.arange(points - 1) + 0.5) * h
                self.measures = unit_sphere_area(params.n) * r_face ** (params.n - 1) * h
            else:
                self.measures = np.full(points - 1, h)

        self.weights = grid.weights().ravel()
        self.free = grid.interior_mask().ravel()
        logger.debug(
            f"PLaplacianOp {grid.mode.value} shape={grid.shape} elements={self.measures.size} p={self.p}"
        )

    # element quantities

    def _check(self, f: Field):
        if f.grid != self.grid:
            raise GeometryError(
                f"field grid {f.grid.describe()} does not match operator grid {self.grid.describe()}"
            )

    def gradients(self, values: np.ndarray) -> List[np.ndarray]:
        flat = np.asarray(values, dtype=float).ravel()
        return [G @ flat for G in self.components]

    @staticmethod
    def _magnitude(grads: List[np.ndarray]) -> np.ndarray:
        if len(grads) == 1:
            return np.abs(grads[0])
        return np.sqrt(sum(g * g for g in grads))

    def _coefficients(self, grads: List[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """a = |g|^(p-2), b = (p-2)|g|^(p-4); both vanish where the gradient does (p > 2)"""
        mag = self._magnitude(grads)
        p = self.p
        if p == 2.0:
            return np.ones_like(mag), np.zeros_like(mag)
        a = mag ** (p - 2.0)
        b = np.zeros_like(mag)
        nz = mag > 0.0
        b[nz] = (p - 2.0) * mag[nz] ** (p - 4.0)
        return a, b

    # energy and its derivatives

    def energy(self, values: np.ndarray) -> float:
        """E(f) = sum_e m_e |grad f|^p / p"""
        mag = self._magnitude(self.gradients(values))
        return float(np.sum(self.measures * mag ** self.p) / self.p)

    def energy_gradient(self, values: np.ndarray) -> np.ndarray:
        """dE/df over all nodes (flattened)"""
        grads = self.gradients(values)
        a, _ = self._coefficients(grads)
        weighted = self.measures * a
        return sum(G.T @ (weighted * g) for G, g in zip(self.components, grads))

    def hessian_matvec(self, values: np.ndarray, direction: np.ndarray) -> np.ndarray:
        """Action of the energy Hessian at values on a nodal direction (flattened)"""
        grads = self.gradients(values)
        a, b = self._coefficients(grads)
        dgrads = [G @ direction for G in self.components]
        projection = sum(g * d for g, d in zip(grads, dgrads))
        out = np.zeros(self.grid.size)
        for G, g, d in zip(self.components, grads, dgrads):
            out += G.T @ (self.measures * (a * d + b * projection * g))
        return out

    def hessian_diagonal(self, values: np.ndarray) -> np.ndarray:
        """Diagonal of the energy Hessian, used as Jacobi preconditioner"""
        grads = self.gradients(values)
        a, b = self._coefficients(grads)
        diag = np.zeros(self.grid.size)
        for G in self.components:
            diag += G.multiply(G).T @ (self.measures * a)
        if np.any(b):
            M = sum(sparse.diags(g) @ G for G, g in zip(self.components, grads))
            diag += M.multiply(M).T @ (self.measures * b)
        return diag

    # nodal operator

    def apply(self, f: Field) -> Field:
        """Delta_p f on free nodes; zero on Dirichlet nodes"""
        self._check(f)
        out = np.zeros(self.grid.size)
        out[self.free] = -self.energy_gradient(f.values)[self.free] / self.weights[self.free]
        return Field(self.grid, out.reshape(self.grid.shape))

    def grad_p_energy(self, f: Field) -> float:
        """sum_e m_e |grad f|^p, the discrete ||grad f||_p^p"""
        self._check(f)
        return self.p * self.energy(f.values)

    def flux_pairing(self, f: Field, g: Field) -> float:
        """sum_e m_e |grad f|^(p-2) grad f . grad g"""
        self._check(f)
        self._check(g)
        gf = self.gradients(f.values)
        gg = self.gradients(g.values)
        a, _ = self._coefficients(gf)
        dot = sum(x * y for x, y in zip(gf, gg))
        return float(np.sum(self.measures * a * dot))

    def pairing(self, a: Field, b: Field) -> float:
        """Discrete L^2 pairing <a, b>_h against the nodal weights"""
        self._check(a)
        self._check(b)
        return integrate(self.grid, a.values * b.values)


def apply_p_laplacian(op: PLaplacianOp, f: Field) -> Field:
    return op.apply(f)


def grad_p_energy(op: PLaplacianOp, f: Field) -> float:
    return op.grad_p_energy(f)


def lr_norm(f: Field, r: float) -> float:
    """
    Discrete L^r norm against the grid quadrature measure

    Raises:
        ParameterDomainError: If r < 1
    """
    if not r >= 1.0:
        raise ParameterDomainError(f"L^r norm needs r >= 1, got r={r}")
    return integrate(f.grid, np.abs(f.values) ** r) ** (1.0 / r)


def flux_monotonicity_probe(xi: np.ndarray, eta: np.ndarray, p: float,
                            constant: Optional[float] = None) -> Tuple[float, float]:
    """
    Evaluate both sides of (|xi|^(p-2) xi - |eta|^(p-2) eta).(xi - eta) >= c |xi - eta|^p

    Args:
        xi: First vector
        eta: Second vector
        p: Exponent (p >= 2)
        constant: Candidate c, defaults to 2^(2-p)

    Returns:
        (lhs, bound)
    """
    if p < 2.0:
        raise ParameterDomainError(f"flux monotonicity probe is stated for p >= 2, got p={p}")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    c = 2.0 ** (2.0 - p) if constant is None else constant
    diff = xi - eta
    flux_xi = np.dot(xi, xi) ** ((p - 2.0) / 2.0) * xi
    flux_eta = np.dot(eta, eta) ** ((p - 2.0) / 2.0) * eta
    lhs = float(np.dot(flux_xi - flux_eta, diff))
    bound = float(c * np.dot(diff, diff) ** (p / 2.0))
    return lhs, bound


def flux_monotonicity_sweep(rng: np.random.Generator, p: float, pairs: int = 100_000,
                            dim: int = 3, box: float = 10.0) -> dict:
    """
    Random search for violations of the flux monotonicity bound

    Returns:
        Dict with the pair count, violation count, the smallest lhs - bound and the
        largest relative gap |lhs - bound| / bound (exact equality expected at p = 2)
    """
    if p < 2.0:
        raise ParameterDomainError(f"flux monotonicity probe is stated for p >= 2, got p={p}")
    xi = rng.uniform(-box, box, size=(pairs, dim))
    eta = rng.uniform(-box, box, size=(pairs, dim))
    diff = xi - eta
    flux_xi = np.sum(xi * xi, axis=1, keepdims=True) ** ((p - 2.0) / 2.0) * xi
    flux_eta = np.sum(eta * eta, axis=1, keepdims=True) ** ((p - 2.0) / 2.0) * eta
    lhs = np.sum((flux_xi - flux_eta) * diff, axis=1)
    bound = 2.0 ** (2.0 - p) * np.sum(diff * diff, axis=1) ** (p / 2.0)
    gap = lhs - bound
    rel = np.abs(gap) / np.where(bound > 0.0, bound, 1.0)
    # antipodal pairs attain equality, so rounding is allowed for
    result = {
        "p": float(p),
        "pairs": int(pairs),
        "violations": int(np.sum(gap < -1e-12 * bound)),
        "min_margin": float(np.min(gap)),
        "max_relative_gap": float(np.max(rel)),
    }
    logger.debug(f"flux monotonicity sweep: {result}")
    return result
