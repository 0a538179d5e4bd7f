"""Label uncertainty for LiDAR BEV boxes and the losses built on it.

Subpackages cover BEV geometry, KITTI ingestion, the generative label
posterior and its heuristic baselines, box encoding with variance
propagation, NLL/KLD training losses, KITTI-protocol AP scoring, a
synthetic desk-scale benchmark, and the command-line harness.
"""

__version__ = "0.1.0"

from .bounds import PRED_VAR_FLOOR, VAR_MAX, VAR_MIN
from .geometry import BoxBEV, Polygon2D

__all__ = [
    "__version__",
    "VAR_MIN",
    "VAR_MAX",
    "PRED_VAR_FLOOR",
    "BoxBEV",
    "Polygon2D",
]
