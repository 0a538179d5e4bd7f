"""Baseline label-uncertainty estimators.

Two scalar heuristics (point count with log rescaling, convex-hull IoU) and
the fixed-variance baseline. All emit variances compatible with the
Gaussian label's 5-parameter vector; the heuristics carry no directional
information, so a single scalar is broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import VAR_MAX, VAR_MIN
from .geometry import BoxBEV, DegenerateInput, box_corners, convex_hull, _clip_convex, _shoelace
from .label_uncertainty import PointSetBEV

__all__ = [
    "HeuristicConfig",
    "OutOfRange",
    "variance_from_point_count",
    "variance_from_convex_hull",
    "fixed_variance",
]


class OutOfRange(ValueError):
    """Fixed variance outside [VAR_MIN, VAR_MAX] (would blow up the KL loss)."""


@dataclass(frozen=True)
class HeuristicConfig:
    """Output variance band plus the point-count anchors for log rescaling."""

    var_min: float = 1e-3
    var_max: float = 0.25
    m_min: int = 5
    m_max: int = 5000

    def __post_init__(self):
        if not (0.0 < self.var_min < self.var_max):
            raise ValueError("need 0 < var_min < var_max")
        if not (1 <= self.m_min < self.m_max):
            raise ValueError("need 1 <= m_min < m_max")


def variance_from_point_count(m: int, cfg: HeuristicConfig | None = None) -> float:
    """Scalar variance from the observation count, log-rescaled.

    Counts at or below m_min (including 0) give var_max, counts at or above
    m_max give var_min, log-linear in between.
    """
    cfg = cfg or HeuristicConfig()
    if m < 0:
        raise ValueError("point count must be >= 0")
    if m == 0:
        t = 0.0
    else:
        t = (math.log(m) - math.log(cfg.m_min)) / (math.log(cfg.m_max) - math.log(cfg.m_min))
        t = min(max(t, 0.0), 1.0)
    return t * cfg.var_min + (1.0 - t) * cfg.var_max


def variance_from_convex_hull(
    label: BoxBEV, obs: PointSetBEV, cfg: HeuristicConfig | None = None
) -> float:
    """Scalar variance from the IoU between the box and its points' convex hull.

    Hulls that do not exist (fewer than 3 distinct points, or collinear)
    fall back to var_max.
    """
    cfg = cfg or HeuristicConfig()
    try:
        hull = convex_hull(obs.points)
    except DegenerateInput:
        return cfg.var_max
    box_poly = box_corners(label)
    inter = _clip_convex(hull.vertices, box_poly.vertices)
    ia = _shoelace(inter) if inter is not None else 0.0
    ia = max(ia, 0.0)
    union = hull.area + box_poly.area - ia
    iou = ia / union if union > 0.0 else 0.0
    return cfg.var_min + (1.0 - iou) * (cfg.var_max - cfg.var_min)


def fixed_variance(sigma2: float) -> np.ndarray:
    """Constant variance vector over all 5 box parameters."""
    if not (VAR_MIN <= sigma2 <= VAR_MAX):
        raise OutOfRange(f"sigma2 must lie in [{VAR_MIN}, {VAR_MAX}], got {sigma2}")
    return np.full(5, float(sigma2))
