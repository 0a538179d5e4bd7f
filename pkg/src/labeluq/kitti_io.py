"""KITTI ingestion: labels, calibration, velodyne scans, cropping, association.

Velodyne scans are (N, 4) float32 arrays of x, y, z, intensity in the LiDAR
frame; labels arrive in the camera frame and are converted to LiDAR-frame
BEV boxes through the per-frame calibration.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import BoxBEV, points_in_box
from .label_uncertainty import PointSetBEV

__all__ = [
    "MalformedLine",
    "TruncatedFile",
    "Difficulty",
    "Calibration",
    "CropRange",
    "LabeledObject",
    "parse_calib_file",
    "parse_label_file",
    "load_point_cloud",
    "serialize_point_cloud",
    "crop_to_range",
    "associate_points_to_box",
    "difficulty_of",
    "load_frame",
    "read_split_ids",
]

log = logging.getLogger(__name__)

_POINT_RECORD_BYTES = 16  # four little-endian float32 per point


class MalformedLine(ValueError):
    """A label line with the wrong field count or a non-numeric field."""

    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class TruncatedFile(ValueError):
    """Velodyne blob length is not a multiple of the 16-byte point record."""


class Difficulty(enum.Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"
    IGNORED = "ignored"

    @property
    def rank(self):
        """Easy < Moderate < Hard; Ignored sits outside the buckets."""
        return {"easy": 0, "moderate": 1, "hard": 2, "ignored": 3}[self.value]


@dataclass(frozen=True, eq=False)
class Calibration:
    """Per-frame rectification and velodyne-to-camera transforms (4x4 homogeneous)."""

    rect: np.ndarray
    velo_to_cam: np.ndarray

    def __post_init__(self):
        for name in ("rect", "velo_to_cam"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (4, 4):
                raise ValueError(f"{name} must be 4x4")
            object.__setattr__(self, name, m)

    @cached_property
    def cam_to_velo(self):
        return np.linalg.inv(self.velo_to_cam) @ np.linalg.inv(self.rect)

    def cam_point_to_velo(self, xyz):
        p = self.cam_to_velo @ np.array([xyz[0], xyz[1], xyz[2], 1.0])
        return p[:3]

    def cam_yaw_to_velo(self, ry):
        """LiDAR heading for a camera-frame rotation_y.

        Transforms the object's length axis (cos ry, 0, -sin ry in camera
        coordinates) through the rotation part of cam_to_velo.
        """
        dir_cam = np.array([math.cos(ry), 0.0, -math.sin(ry)])
        dir_velo = self.cam_to_velo[:3, :3] @ dir_cam
        return math.atan2(dir_velo[1], dir_velo[0])

    @classmethod
    def canonical(cls):
        """Idealized KITTI extrinsics: x_cam = -y_velo, y_cam = -z_velo, z_cam = x_velo."""
        tr = np.array(
            [
                [0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        return cls(rect=np.eye(4), velo_to_cam=tr)


@dataclass(frozen=True)
class CropRange:
    """Evaluation volume and grid resolution.

    z_offset is added to raw LiDAR z before testing the z window, bridging
    the ground-relative window to the sensor-relative KITTI frame.
    """

    x: tuple = (0.0, 70.0)
    y: tuple = (-40.0, 40.0)
    z: tuple = (0.0, 2.5)
    resolution: float = 0.1
    z_offset: float = 2.5

    def __post_init__(self):
        for axis in (self.x, self.y, self.z):
            if not axis[0] < axis[1]:
                raise ValueError("crop bounds need lo < hi on every axis")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")


@dataclass(frozen=True, eq=False)
class LabeledObject:
    """One annotated object, geometry already in the LiDAR frame.

    box is None only for ignorable entries ("DontCare"), whose geometry the
    format does not guarantee. z_center and height are kept for cropping and
    never reach the losses.
    """

    class_name: str
    truncation: float
    occlusion: int
    bbox2d_height: float
    box: BoxBEV | None
    z_center: float
    height: float

    @property
    def ignore(self):
        return self.class_name == "DontCare"


def parse_calib_file(text: str) -> Calibration:
    """Parse 'key: v1 v2 ...' calibration lines into a Calibration."""
    values = {}
    for raw in text.splitlines():
        if ":" not in raw:
            continue
        key, _, rest = raw.partition(":")
        fields = rest.split()
        if fields:
            values[key.strip()] = np.array([float(f) for f in fields])
    rect_key = "R0_rect" if "R0_rect" in values else "R_rect"
    if rect_key not in values or "Tr_velo_to_cam" not in values:
        raise ValueError("calibration needs R0_rect and Tr_velo_to_cam")
    rect = np.eye(4)
    rect[:3, :3] = values[rect_key].reshape(3, 3)
    tr = np.eye(4)
    tr[:3, :4] = values["Tr_velo_to_cam"].reshape(3, 4)
    return Calibration(rect=rect, velo_to_cam=tr)


def parse_label_file(text: str, calib: Calibration) -> list[LabeledObject]:
    """Parse KITTI label lines (15 whitespace-separated fields per object).

    Devkit field order: type, truncation, occlusion, alpha, bbox left/top/
    right/bottom, h, w, l, location x/y/z (camera frame), rotation_y.
    Camera-frame pose is converted to a LiDAR-frame BEV box; "DontCare"
    entries are kept but flagged ignorable with no geometry.
    """
    objects = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split()
        if len(fields) != 15:
            raise MalformedLine(line_no, f"expected 15 fields, got {len(fields)}")
        name = fields[0]
        try:
            vals = [float(f) for f in fields[1:]]
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from None
        truncation = vals[0]
        occlusion = int(vals[1])
        left, top, right, bottom = vals[3:7]
        h, w, l = vals[7:10]
        if name == "DontCare":
            objects.append(
                LabeledObject(name, truncation, occlusion, bottom - top, None, math.nan, math.nan)
            )
            continue
        if occlusion not in (0, 1, 2, 3):
            raise MalformedLine(line_no, f"occlusion {occlusion} outside 0..3")
        x, y, z = calib.cam_point_to_velo(vals[10:13])
        theta = calib.cam_yaw_to_velo(vals[13])
        box = BoxBEV(x, y, l, w, theta)
        # KITTI locations are box-bottom centers; lift to the volumetric center.
        objects.append(LabeledObject(name, truncation, occlusion, bottom - top, box, z + h / 2.0, h))
    return objects


def load_point_cloud(data: bytes) -> np.ndarray:
    """Decode a velodyne blob into an (N, 4) float32 array, file order preserved."""
    if len(data) % _POINT_RECORD_BYTES != 0:
        raise TruncatedFile(f"blob length {len(data)} is not a multiple of {_POINT_RECORD_BYTES}")
    return np.frombuffer(data, dtype="<f4").reshape(-1, 4).copy()


def serialize_point_cloud(points: np.ndarray) -> bytes:
    """Inverse of load_point_cloud, bit-exact for float32 input."""
    pts = np.ascontiguousarray(points, dtype="<f4")
    if pts.ndim != 2 or pts.shape[1] != 4:
        raise ValueError("points must be (N, 4)")
    return pts.tobytes()


def crop_to_range(points: np.ndarray, crop: CropRange) -> np.ndarray:
    """Keep points inside the crop volume (half-open upper bounds), order preserved."""
    pts = np.asarray(points)
    z = pts[:, 2] + crop.z_offset
    keep = (
        (pts[:, 0] >= crop.x[0])
        & (pts[:, 0] < crop.x[1])
        & (pts[:, 1] >= crop.y[0])
        & (pts[:, 1] < crop.y[1])
        & (z >= crop.z[0])
        & (z < crop.z[1])
    )
    return pts[keep]


def associate_points_to_box(
    obj: LabeledObject, points: np.ndarray, margin: float = 0.2
) -> PointSetBEV:
    """BEV projections of the points inside the object's box dilated by margin.

    The default margin of 0.2 m captures on-surface returns scattered by
    sensor noise. Empty association is a valid result.
    """
    if obj.box is None:
        return PointSetBEV(np.empty((0, 2)))
    bev = np.asarray(points, dtype=float)[:, :2]
    idx = points_in_box(obj.box, bev, margin)
    return PointSetBEV(bev[idx])


def difficulty_of(obj: LabeledObject) -> Difficulty:
    """KITTI devkit difficulty bucket from 2D height, occlusion, truncation."""
    if obj.ignore:
        return Difficulty.IGNORED
    h, occ, tr = obj.bbox2d_height, obj.occlusion, obj.truncation
    if h >= 40.0 and occ == 0 and tr <= 0.15:
        return Difficulty.EASY
    if h >= 25.0 and occ <= 1 and tr <= 0.30:
        return Difficulty.MODERATE
    if h >= 25.0 and occ <= 2 and tr <= 0.50:
        return Difficulty.HARD
    return Difficulty.IGNORED


def load_frame(root, frame_id: str, crop: CropRange | None = None):
    """Load one frame's (objects, cropped points) from a KITTI directory tree.

    Expects <root>/label_2/<id>.txt, <root>/calib/<id>.txt and
    <root>/velodyne/<id>.bin. Frames with missing or unparsable calibration
    are skipped with a warning (returns None).
    """
    root = Path(root)
    crop = crop or CropRange()
    calib_path = root / "calib" / f"{frame_id}.txt"
    try:
        calib = parse_calib_file(calib_path.read_text())
    except (OSError, ValueError) as exc:
        log.warning("skipping frame %s: calibration unavailable (%s)", frame_id, exc)
        return None
    objects = parse_label_file((root / "label_2" / f"{frame_id}.txt").read_text(), calib)
    points = load_point_cloud((root / "velodyne" / f"{frame_id}.bin").read_bytes())
    return objects, crop_to_range(points, crop)


def read_split_ids(path) -> list[str]:
    """Frame IDs from a split list, one zero-padded ID per line."""
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
