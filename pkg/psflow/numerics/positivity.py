"""
Empirical checks of the measure hypotheses and the qualitative positivity
conclusions for the constrained flow. No proof constants are computed here.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from numerics.core_types import Field, FlowParams, Grid, GridMode
from numerics.exceptions import (
    GeometryError,
    InvariantFailureError,
    ParameterDomainError,
    TimeRangeError,
)
from numerics.operators import lr_norm

logger = logging.getLogger(__name__)

CHAIN_SPACING = 1.2
MEASURE_SLACK = 1e-10
CONSTRAINT_TOL = 1e-10


@dataclass(frozen=True)
class SubdomainSpec:
    """
    Interior region Omega' (nodes at least margin_cells from the Dirichlet
    boundary) and a chain of balls of radius rho = rho_cells * h covering it.

    Chain centres form a lattice of spacing 1.2 rho visited in snake order, so
    consecutive centres are 1.2 rho apart and every point of the lattice box is
    within 0.85 rho of a centre.
    """
    grid: Grid
    rho_cells: float
    margin_cells: int

    @property
    def rho(self) -> float:
        return self.rho_cells * self.grid.h

    @property
    def spacing(self) -> float:
        return CHAIN_SPACING * self.rho

    def mask(self) -> np.ndarray:
        grid, m = self.grid, self.margin_cells
        mask = np.zeros(grid.shape, dtype=bool)
        if grid.mode == GridMode.RADIAL:
            mask[: grid.shape[0] - 1 - m] = True
            return mask
        index = tuple(slice(m, n - m) for n in grid.shape)
        mask[index] = True
        return mask

    def _box(self) -> List[Tuple[float, float]]:
        mask = self.mask()
        box = []
        for axis, coords in enumerate(self.grid.coordinates()):
            other = tuple(a for a in range(mask.ndim) if a != axis)
            used = np.any(mask, axis=other) if other else mask
            box.append((float(coords[used][0]), float(coords[used][-1])))
        return box

    def _counts(self) -> List[int]:
        d = self.spacing
        return [int(math.ceil((hi - lo) / d - 1e-12)) + 1 for lo, hi in self._box()]

    def centers(self) -> np.ndarray:
        """Chain centres in snake order, shape (count, ndim)"""
        d = self.spacing
        box, counts = self._box(), self._counts()
        axes = [lo + d * np.arange(c) for (lo, _), c in zip(box, counts)]
        if len(axes) == 1:
            return axes[0][:, None]
        rows = []
        for k, x in enumerate(axes[0]):
            ys = axes[1] if k % 2 == 0 else axes[1][::-1]
            rows.append(np.column_stack([np.full(ys.size, x), ys]))
        return np.vstack(rows)

    def covering_distance(self) -> np.ndarray:
        """Distance of every Omega' node to its nearest chain centre"""
        d = self.spacing
        box, counts = self._box(), self._counts()
        mask = self.mask()
        squared = np.zeros(int(mask.sum()))
        for (lo, _), count, axis in zip(box, counts, self.grid.mesh()):
            x = axis[mask]
            nearest = np.clip(np.rint((x - lo) / d), 0, count - 1)
            squared += (x - (lo + d * nearest)) ** 2
        return np.sqrt(squared)


def make_subdomain(grid: Grid, rho_cells: float = 1.0, margin_cells: Optional[int] = None) -> SubdomainSpec:
    """
    Build Omega' with margin >= ceil(16 rho_cells) and its ball chain

    Raises:
        GeometryError: If the margin is too small or Omega' is empty
    """
    if not rho_cells > 0.0:
        raise ParameterDomainError(f"rho_cells must be positive, got {rho_cells}")
    required = int(math.ceil(16.0 * rho_cells - 1e-12))
    margin = required if margin_cells is None else int(margin_cells)
    if margin < required:
        raise GeometryError(f"margin of {margin} cells is below 16 rho = {required} cells")
    region = SubdomainSpec(grid=grid, rho_cells=float(rho_cells), margin_cells=margin)
    if not region.mask().any():
        raise GeometryError(f"margin of {margin} cells leaves an empty interior region")
    return region


def check_chain(region: SubdomainSpec) -> Dict:
    """Covering radius and consecutive-centre spacing of the ball chain"""
    rho = region.rho
    cover = float(np.max(region.covering_distance()))
    centers = region.centers()
    gaps = np.linalg.norm(np.diff(centers, axis=0), axis=1) if len(centers) > 1 else np.array([])
    return {
        "centers": int(len(centers)),
        "covering_radius": cover,
        "covers": bool(cover <= rho),
        "min_gap": float(np.min(gaps, initial=np.inf)),
        "max_gap": float(np.max(gaps, initial=0.0)),
        "chained": bool(np.all((gaps > rho) & (gaps < 2.0 * rho))),
    }


@dataclass(frozen=True)
class SublevelMeasure:
    measure_ge: float
    alpha_hat: float
    measure_gt: float
    alpha_hat_open: float


def sublevel_measure(u_t: Field, region: SubdomainSpec, L: float) -> SublevelMeasure:
    """
    |Omega' cap {u >= L}| and its fraction of |Omega'|, with the open {u > L} variant

    Raises:
        GeometryError: If the region is empty or on another grid
    """
    if not L > 0.0:
        raise ParameterDomainError(f"level L must be positive, got {L}")
    if u_t.grid != region.grid:
        raise GeometryError("field and region live on different grids")
    mask = region.mask()
    w = u_t.grid.weights()
    total = float(np.sum(w[mask]))
    if not total > 0.0:
        raise GeometryError("interior region has zero measure")
    values = u_t.values
    closed = float(np.sum(w[mask & (values >= L)]))
    opened = float(np.sum(w[mask & (values > L)]))
    return SublevelMeasure(closed, closed / total, opened, opened / total)


def alpha_lower_bound(L: float, M: float, q: float, inner: float, outer: float) -> float:
    """(1 - L^(q+1) |Omega'| - M^(q+1) |Omega \\ Omega'|) / M^(q+1)"""
    r = q + 1.0
    return (1.0 - L ** r * inner - M ** r * outer) / M ** r


def volume_constraint_alpha(u_t: Field, region: SubdomainSpec, M: float, L: float,
                            params: FlowParams, strict: bool = True) -> Dict:
    """
    Lower bound on |Omega' cap {u >= L}| forced by the unit L^{q+1} constraint

    Returns:
        Report with the bound, the measured sublevel measure, each hypothesis
        and whether the inequality holds

    Raises:
        InvariantFailureError: If strict, every hypothesis holds and the measured
            set is smaller than the bound by more than 1e-10
    """
    q, r = params.q, params.q + 1.0
    w = u_t.grid.weights()
    mask = region.mask()
    inner = float(np.sum(w[mask]))
    outer = float(np.sum(w[~mask]))
    norm = lr_norm(u_t, r)
    hypotheses = {
        "unit_norm": abs(norm - 1.0) <= CONSTRAINT_TOL,
        "M_dominates": M >= u_t.max(),
        "outer_small": outer <= 1.0 / (4.0 * M ** r),
        "level_small": L ** r * inner <= 0.25,
    }
    measured = sublevel_measure(u_t, region, L)
    bound = alpha_lower_bound(L, M, q, inner, outer)
    holds = measured.measure_ge >= bound - MEASURE_SLACK
    report = {
        "alpha_bound": bound,
        "measure_ge": measured.measure_ge,
        "measure_gt": measured.measure_gt,
        "alpha_hat": measured.alpha_hat,
        "hypotheses": hypotheses,
        "violations": [name for name, ok in hypotheses.items() if not ok],
        "applicable": all(hypotheses.values()),
        "holds": bool(holds),
    }
    if strict and report["applicable"] and not holds:
        raise InvariantFailureError(
            f"sublevel measure {measured.measure_ge:.17g} below the volume bound {bound:.17g}",
            report=report,
        )
    return report


def positivity_floor_track(series: Sequence[Tuple[float, Field]], region: SubdomainSpec,
                           strict: bool = True) -> List[Tuple[float, float]]:
    """
    Infimum of u over Omega' at every sampled t

    Raises:
        InvariantFailureError: If strict and some infimum is not positive
    """
    mask = region.mask()
    track = [(float(t), float(np.min(u.values[mask]))) for t, u in series]
    bad = [t for t, inf_u in track if not inf_u > 0.0]
    if bad and strict:
        raise InvariantFailureError(f"interior infimum not positive at t={bad[:5]}", report=track)
    return track


def stretched_time(t, t_hat: float):
    """tau with -e^(-tau) = (t - t_hat)/t_hat, defined for 0 <= t < t_hat"""
    if not t_hat > 0.0:
        raise ParameterDomainError(f"t_hat must be positive, got {t_hat}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t >= t_hat):
        raise TimeRangeError(f"stretched time needs 0 <= t < t_hat = {t_hat}")
    tau = -np.log1p(-t / t_hat)
    return float(tau) if tau.ndim == 0 else tau


def unstretched_time(tau, t_hat: float):
    tau = np.asarray(tau, dtype=float)
    t = -t_hat * np.expm1(-tau)
    return float(t) if t.ndim == 0 else t


def resolve_M(policy: str, u_t: Field, u0: Field) -> float:
    """M from a policy: "max" (max u_t), "max_u0", or a number given as text"""
    if policy == "max":
        return u_t.max()
    if policy == "max_u0":
        return max(u0.max(), u_t.max())
    try:
        return float(policy)
    except ValueError:
        raise ParameterDomainError(f"unknown M policy {policy!r}")


def positivity_report(series: Sequence[Tuple[float, Field]], u0: Field, region: SubdomainSpec,
                      params: FlowParams, levels: Sequence[float], M_policy: str = "max",
                      t_hat: Optional[float] = None) -> Dict:
    """
    Per-t records {t, tau, alpha_hat, alpha_bound, inf_u, violations} for each level L

    The volume inequality is checked wherever its hypotheses hold; failures there
    are listed under "failures" rather than raised, so the report is always complete.
    """
    mask = region.mask()
    times = np.array([t for t, _ in series])
    t_hat = t_hat if t_hat is not None else float(times[-1]) * 1.01 + 1e-12
    taus = stretched_time(times, t_hat)
    records, failures = [], []
    for (t, u), tau in zip(series, np.atleast_1d(taus)):
        M = resolve_M(M_policy, u, u0)
        inf_u = float(np.min(u.values[mask]))
        for L in levels:
            check = volume_constraint_alpha(u, region, M, L, params, strict=False)
            violations = list(check["violations"])
            if not inf_u > 0.0:
                violations.append("nonpositive_infimum")
            if check["applicable"] and not check["holds"]:
                failures.append({"t": float(t), "L": float(L)})
            records.append({
                "t": float(t),
                "tau": float(tau),
                "L": float(L),
                "M": float(M),
                "alpha_hat": check["alpha_hat"],
                "alpha_bound": check["alpha_bound"],
                "measure_ge": check["measure_ge"],
                "measure_gt": check["measure_gt"],
                "inf_u": inf_u,
                "violations": violations,
            })
    tau_monotone = bool(np.all(np.diff(np.atleast_1d(taus)) > 0.0))
    logger.info(f"Positivity report: {len(records)} records, {len(failures)} inequality failures")
    return {
        "region": {"rho_cells": region.rho_cells, "margin_cells": region.margin_cells},
        "chain": check_chain(region),
        "t_hat": t_hat,
        "tau_monotone": tau_monotone,
        "records": records,
        "failures": failures,
    }
