"""Line-delimited record formats, schema checks, and the run manifest.

Every exported record carries a versioned "schema" tag and is validated
against the in-repo schema table below. Files are written atomically
(temp + rename) with sorted keys so identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import BoxBEV
from .kitti_io import CropRange, Difficulty, associate_points_to_box, difficulty_of, load_frame
from .label_uncertainty import PointSetBEV

__all__ = [
    "SchemaError",
    "SCHEMA_VERSION",
    "SCHEMAS",
    "validate_record",
    "dump_jsonl",
    "load_jsonl",
    "ObjectRecord",
    "records_from_scene",
    "records_from_kitti_frame",
    "write_manifest",
    "file_sha256",
    "atomic_write_text",
]

SCHEMA_VERSION = "v1"


class SchemaError(ValueError):
    """Record does not match its declared schema."""


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_str(x):
    return isinstance(x, str)


def _vec(n):
    return lambda x: (
        isinstance(x, list) and len(x) == n and all(_is_num(v) for v in x)
    )


def _point_list(x):
    return isinstance(x, list) and all(
        isinstance(p, list) and len(p) == 2 and all(_is_num(v) for v in p) for p in x
    )


def _opt(check):
    return lambda x: x is None or check(x)


SCHEMAS = {
    "object": {
        "frame": _is_str,
        "index": _is_int,
        "label": _vec(5),
        "points": _point_list,
        "truth": _opt(_vec(5)),
        "coverage": _opt(_is_num),
        "difficulty": _opt(_is_str),
    },
    "uncertainty": {
        "frame": _is_str,
        "index": _is_int,
        "method": _is_str,
        "m": _is_int,
        "mean": _vec(5),
        "var": _vec(5),
        "encoded_var": _vec(6),
    },
    "detection": {
        "frame": _is_str,
        "box": _vec(5),
        "score": _is_num,
    },
    "prpoint": {
        "method": _is_str,
        "difficulty": _is_str,
        "recall": _is_num,
        "precision": _is_num,
    },
    "apresult": {
        "method": _is_str,
        "difficulty": _is_str,
        "ap": _is_num,
        "tp": _is_int,
        "fp": _is_int,
        "fn": _is_int,
        "variant": _is_str,
    },
    "aptable": {
        "method": _is_str,
        "difficulty": _is_str,
        "mean_ap": _is_num,
        "std_ap": _is_num,
        "delta_vs_baseline": _opt(_is_num),
        "n_seeds": _is_int,
    },
    "sweeppoint": {
        "log10_var": _is_num,
        "difficulty": _is_str,
        "mean_ap": _is_num,
        "std_ap": _is_num,
    },
    "manifest": {
        "command": _is_str,
        "config": lambda x: isinstance(x, dict),
        "seeds": lambda x: isinstance(x, list) and all(_is_int(v) for v in x),
        "inputs": lambda x: isinstance(x, list) and all(_is_str(v) for v in x),
        "tool_version": _is_str,
        "outputs": lambda x: isinstance(x, dict)
        and all(_is_str(k) and _is_str(v) for k, v in x.items()),
    },
}


def schema_tag(kind):
    return f"{kind}/{SCHEMA_VERSION}"


def validate_record(kind, rec):
    """Raise SchemaError unless `rec` matches the `kind` schema."""
    if kind not in SCHEMAS:
        raise SchemaError(f"unknown record kind {kind!r}")
    if not isinstance(rec, dict):
        raise SchemaError("record must be a JSON object")
    if rec.get("schema") != schema_tag(kind):
        raise SchemaError(f"expected schema {schema_tag(kind)!r}, got {rec.get('schema')!r}")
    for field, check in SCHEMAS[kind].items():
        if field not in rec:
            raise SchemaError(f"{kind} record missing field {field!r}")
        if not check(rec[field]):
            raise SchemaError(f"{kind} record field {field!r} has invalid value {rec[field]!r}")


def atomic_write_text(path, text):
    """Write text via a temp file + rename so partial files never appear."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_bytes(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def dump_jsonl(path, kind, records):
    """Validate and write records as one JSON object per line (atomic)."""
    lines = []
    for rec in records:
        rec = dict(rec)
        rec.setdefault("schema", schema_tag(kind))
        validate_record(kind, rec)
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_jsonl(path, kind=None):
    """Read JSONL records, validating against `kind` when given."""
    out = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{line_no}: invalid JSON ({exc})") from None
        if kind is not None:
            validate_record(kind, rec)
        out.append(rec)
    return out


@dataclass(frozen=True, eq=False)
class ObjectRecord:
    """One object as it flows through the harness: label, points, optional truth."""

    frame: str
    index: int
    label: BoxBEV
    points: PointSetBEV
    truth: BoxBEV | None = None
    coverage: float | None = None
    difficulty: Difficulty | None = None

    def to_record(self):
        return {
            "schema": schema_tag("object"),
            "frame": self.frame,
            "index": self.index,
            "label": [float(v) for v in self.label.as_vector()],
            "points": [[float(p[0]), float(p[1])] for p in self.points.points],
            "truth": None if self.truth is None else [float(v) for v in self.truth.as_vector()],
            "coverage": None if self.coverage is None else float(self.coverage),
            "difficulty": None if self.difficulty is None else self.difficulty.value,
        }

    @classmethod
    def from_record(cls, rec):
        validate_record("object", rec)
        return cls(
            frame=rec["frame"],
            index=rec["index"],
            label=BoxBEV.from_vector(rec["label"]),
            points=PointSetBEV(np.asarray(rec["points"], dtype=float).reshape(-1, 2)),
            truth=None if rec["truth"] is None else BoxBEV.from_vector(rec["truth"]),
            coverage=rec["coverage"],
            difficulty=None if rec["difficulty"] is None else Difficulty(rec["difficulty"]),
        )


def records_from_scene(scene) -> list[ObjectRecord]:
    """ObjectRecords for one synthetic scene (truth and coverage retained)."""
    return [
        ObjectRecord(
            frame=scene.frame_id,
            index=i,
            label=obj.label,
            points=obj.points,
            truth=obj.truth,
            coverage=obj.coverage,
            difficulty=obj.difficulty,
        )
        for i, obj in enumerate(scene.objects)
    ]


def records_from_kitti_frame(
    root, frame_id, crop: CropRange | None = None, margin: float = 0.2, classes=("Car",)
) -> list[ObjectRecord]:
    """ObjectRecords for one KITTI frame; skipped frames yield an empty list.

    Keeps objects of the requested classes whose box center lies inside the
    crop's x/y window; difficulty comes from the devkit rule.
    """
    crop = crop or CropRange()
    loaded = load_frame(root, frame_id, crop)
    if loaded is None:
        return []
    objects, points = loaded
    out = []
    for i, obj in enumerate(objects):
        if obj.ignore or obj.class_name not in classes or obj.box is None:
            continue
        b = obj.box
        if not (crop.x[0] <= b.cx < crop.x[1] and crop.y[0] <= b.cy < crop.y[1]):
            continue
        out.append(
            ObjectRecord(
                frame=frame_id,
                index=i,
                label=b,
                points=associate_points_to_box(obj, points, margin),
                truth=None,
                coverage=None,
                difficulty=difficulty_of(obj),
            )
        )
    return out


def file_sha256(path):
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def write_manifest(path, command, config, seeds, inputs, output_paths):
    """Checksummed run manifest, written atomically after the outputs exist."""
    manifest = {
        "schema": schema_tag("manifest"),
        "command": command,
        "config": config,
        "seeds": [int(s) for s in seeds],
        "inputs": [str(p) for p in inputs],
        "tool_version": __version__,
        "outputs": {Path(p).name: file_sha256(p) for p in output_paths},
    }
    validate_record("manifest", manifest)
    atomic_write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
