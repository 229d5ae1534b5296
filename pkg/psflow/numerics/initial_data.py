"""
Initial-data presets: bump, truncated Talenti, plateau, or a snapshot file
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from numerics.core_types import Field, FlowParams, Grid, GridMode
from numerics.exceptions import GeometryError, ParameterDomainError
from numerics.talenti import TalentiProfile

logger = logging.getLogger(__name__)

PRESETS = ("bump", "truncated_talenti", "plateau", "file")


def _domain_center(grid: Grid) -> tuple:
    if grid.mode == GridMode.RADIAL:
        return (0.0,)
    return tuple(0.5 * e for e in grid.extent)


def bump(grid: Grid) -> np.ndarray:
    """Product of sines on Cartesian grids, cos(pi r / 2R) on radial grids"""
    axes = grid.mesh()
    if grid.mode == GridMode.RADIAL:
        values = np.cos(0.5 * np.pi * axes[0] / grid.extent[0])
    else:
        values = np.ones(grid.shape)
        for x, ext in zip(axes, grid.extent):
            values = values * np.sin(np.pi * x / ext)
    values[grid.boundary_mask()] = 0.0
    return np.maximum(values, 0.0)


def truncated_talenti(grid: Grid, params: FlowParams, lam: float = 1.0,
                      center: Optional[Sequence[float]] = None) -> np.ndarray:
    """(Y - max of Y on the boundary)_+ for a Talenti profile centred in the domain"""
    center = tuple(center) if center is not None else _domain_center(grid)
    prof = TalentiProfile(params=params, lam=lam, center=center)
    values = prof.on_grid(grid)
    edge = float(np.max(values[grid.boundary_mask()]))
    values = np.maximum(values - edge, 0.0)
    values[grid.boundary_mask()] = 0.0
    return values


def plateau(grid: Grid, width: float = 0.1, level: float = 1.0) -> np.ndarray:
    """Constant level on the interior with a linear ramp of the given width at the boundary"""
    if not width > 0.0:
        raise ParameterDomainError(f"plateau ramp width must be positive, got {width}")
    axes = grid.mesh()
    if grid.mode == GridMode.RADIAL:
        distance = grid.extent[0] - axes[0]
    else:
        distance = np.min([np.minimum(x, ext - x) for x, ext in zip(axes, grid.extent)], axis=0)
    values = level * np.clip(distance / width, 0.0, 1.0)
    values[grid.boundary_mask()] = 0.0
    return values


def make_initial(preset: str, grid: Grid, params: FlowParams, **options) -> Field:
    """
    Raw (unnormalized) initial data from a preset name

    Args:
        preset: One of bump, truncated_talenti, plateau, file
        grid: Target grid
        params: Flow exponents (used by truncated_talenti)
        **options: lam and center for truncated_talenti, width and level for plateau,
            path for file

    Returns:
        Field on grid
    """
    if preset == "bump":
        values = bump(grid)
    elif preset == "truncated_talenti":
        values = truncated_talenti(grid, params, lam=options.get("lam", 1.0), center=options.get("center"))
    elif preset == "plateau":
        values = plateau(grid, width=options.get("width", 0.1), level=options.get("level", 1.0))
    elif preset == "file":
        from utils.snapshot_io import read_snapshot
        field = read_snapshot(Path(options["path"]))
        if field.grid != grid:
            raise GeometryError(f"snapshot {options['path']} does not match the configured grid")
        return field
    else:
        raise ParameterDomainError(f"unknown initial-data preset {preset!r}; expected one of {PRESETS}")
    logger.debug(f"Initial data preset {preset}: max {np.max(values):.6g}")
    return Field(grid, values)
