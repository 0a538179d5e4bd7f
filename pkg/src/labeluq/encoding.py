"""Conversion between box parameters and the regression-head encoding.

The head regresses (dx, dy, log l, log w, sin theta, cos theta) relative to a
reference location; variances ride along via first-order error propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bounds import clamp_variance
from .geometry import BoxBEV

__all__ = [
    "BoxEncoding",
    "DegenerateOrientation",
    "ENCODING_FIELDS",
    "encode_box",
    "decode_box",
    "propagate_variance",
]

ENCODING_FIELDS = ("dx", "dy", "log_l", "log_w", "sin_t", "cos_t")


class DegenerateOrientation(ValueError):
    """Both orientation channels are zero; heading is undefined."""


@dataclass(frozen=True)
class BoxEncoding:
    """Network-space box parameters, in ENCODING_FIELDS order."""

    dx: float
    dy: float
    log_l: float
    log_w: float
    sin_t: float
    cos_t: float

    def as_vector(self):
        return np.array(
            [self.dx, self.dy, self.log_l, self.log_w, self.sin_t, self.cos_t],
            dtype=float,
        )

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        if v.shape != (6,):
            raise ValueError("encoding vector must have 6 entries")
        return cls(*(float(x) for x in v))


def encode_box(b: BoxBEV, ref) -> BoxEncoding:
    """Encode a box relative to a 2D reference point."""
    return BoxEncoding(
        dx=b.cx - float(ref[0]),
        dy=b.cy - float(ref[1]),
        log_l=math.log(b.l),
        log_w=math.log(b.w),
        sin_t=math.sin(b.theta),
        cos_t=math.cos(b.theta),
    )


def decode_box(e: BoxEncoding, ref) -> BoxBEV:
    """Invert encode_box; the orientation pair is renormalized first."""
    norm = math.hypot(e.sin_t, e.cos_t)
    if norm == 0.0:
        raise DegenerateOrientation("sin and cos channels are both zero")
    theta = math.atan2(e.sin_t / norm, e.cos_t / norm)
    l = math.exp(e.log_l)
    w = math.exp(e.log_w)
    if not (math.isfinite(l) and math.isfinite(w)):
        raise ValueError("decoded extents overflow")
    return BoxBEV(float(ref[0]) + e.dx, float(ref[1]) + e.dy, l, w, theta)


def propagate_variance(label_var, at: BoxBEV) -> np.ndarray:
    """First-order transport of (cx, cy, l, w, theta) variances into encoding space.

    Each output variance is the squared Jacobian entry times the input
    variance (correlations are ignored throughout), then clamped into
    [VAR_MIN, VAR_MAX] so downstream losses stay finite even where a
    derivative vanishes (e.g. the cos channel at theta = 0).
    """
    v = np.asarray(label_var, dtype=float)
    if v.shape != (5,):
        raise ValueError("label variance must have 5 entries")
    if np.any(v <= 0.0):
        raise ValueError("label variances must be positive")
    c, s = math.cos(at.theta), math.sin(at.theta)
    out = np.array(
        [
            v[0],
            v[1],
            v[2] / (at.l * at.l),
            v[3] / (at.w * at.w),
            (c * c) * v[4],
            (s * s) * v[4],
        ]
    )
    return clamp_variance(out)
