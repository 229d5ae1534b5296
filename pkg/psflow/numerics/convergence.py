"""
Observed convergence orders from refinement studies
"""
import logging
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MIN_MEASURABLE_POINTS = 41


def convergence_slope(hs: Sequence[float], errors: Sequence[float]) -> Optional[float]:
    """
    Least-squares slope of log(error) against log(h)

    Args:
        hs: Step sizes (spatial or temporal)
        errors: Matching error magnitudes

    Returns:
        The slope, or None when fewer than two finite positive errors remain
    """
    pairs = [(h, e) for h, e in zip(hs, errors)
             if h > 0.0 and np.isfinite(e) and e > 0.0]
    if len(pairs) < 2:
        return None
    x = np.log([h for h, _ in pairs])
    y = np.log([e for _, e in pairs])
    slope = float(np.polyfit(x, y, 1)[0])
    logger.debug(f"convergence slope {slope:.3f} from {len(pairs)} levels")
    return slope


def measurable(points_per_axis: Sequence[int]) -> bool:
    """Refinement studies on grids coarser than 41 points per axis are not reported"""
    return min(points_per_axis) >= MIN_MEASURABLE_POINTS


def within(value: Optional[float], low: float, high: float) -> bool:
    return value is not None and low <= value <= high
