"""KITTI-protocol detection scoring in the bird's eye view.

Greedy score-ordered matching at a rotated-IoU threshold, then interpolated
average precision over the 41 fixed recall positions. Ignored ground truths
(harder buckets, DontCare) neither count as misses nor turn their matching
detections into false positives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoxBEV, rotated_iou
from .kitti_io import Difficulty

__all__ = [
    "Detection",
    "GroundTruth",
    "MatchLabel",
    "APResult",
    "NoGroundTruth",
    "match_detections",
    "average_precision",
    "evaluate_frames",
    "ground_truths_at_difficulty",
]


class NoGroundTruth(ValueError):
    """AP requested with zero active ground truths."""


class MatchLabel(enum.Enum):
    TP = "tp"
    FP = "fp"
    IGNORED = "ignored"


@dataclass(frozen=True, eq=False)
class Detection:
    """A scored box; `var` is carried through for downstream tooling, never scored."""

    box: BoxBEV
    score: float
    var: np.ndarray | None = None


@dataclass(frozen=True)
class GroundTruth:
    box: BoxBEV
    ignored: bool = False


@dataclass(frozen=True, eq=False)
class APResult:
    """Interpolated PR summary: ap is the mean of `precisions` at `recalls`."""

    ap: float
    precisions: np.ndarray
    recalls: np.ndarray
    tp: int
    fp: int
    fn: int


def match_detections(dets, gts, iou_thresh: float):
    """Label each detection TP / FP / IGNORED against one frame's ground truths.

    Detections are visited in descending score order (ties by input order);
    each greedily takes the highest-IoU unmatched active ground truth at or
    above the threshold. Detections overlapping only ignored ground truths
    are excluded from scoring. Returns (labels, n_missed_active).
    """
    if not (0.0 < iou_thresh <= 1.0):
        raise ValueError("iou_thresh must be in (0, 1]")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    active = [i for i, g in enumerate(gts) if not g.ignored]
    ignored = [i for i, g in enumerate(gts) if g.ignored]
    taken = set()
    labels = [None] * len(dets)
    for di in order:
        best_iou, best_gt = 0.0, None
        for gi in active:
            if gi in taken:
                continue
            iou = rotated_iou(dets[di].box, gts[gi].box)
            if iou >= iou_thresh and iou > best_iou:
                best_iou, best_gt = iou, gi
        if best_gt is not None:
            taken.add(best_gt)
            labels[di] = MatchLabel.TP
            continue
        if any(rotated_iou(dets[di].box, gts[gi].box) >= iou_thresh for gi in ignored):
            labels[di] = MatchLabel.IGNORED
        else:
            labels[di] = MatchLabel.FP
    return labels, len(active) - len(taken)


def average_precision(scored, n_gt: int, include_r0: bool = True) -> APResult:
    """Interpolated AP over the fixed recall grid.

    `scored` holds (score, is_tp) pairs for every counted detection. The
    precision at each recall position is the maximum precision over
    operating points with recall at or beyond it (0 when unreachable);
    include_r0 selects the classic 41-point grid, otherwise r = 0 is
    dropped (R40 variant).
    """
    if n_gt < 1:
        raise NoGroundTruth("need at least one active ground truth")
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    tp = fp = 0
    op_recall = []
    op_precision = []
    for i in order:
        if scored[i][1]:
            tp += 1
        else:
            fp += 1
        op_recall.append(tp / n_gt)
        op_precision.append(tp / (tp + fp))
    recalls = np.arange(0 if include_r0 else 1, 41) / 40.0
    precisions = np.zeros(recalls.size)
    if op_recall:
        rec = np.asarray(op_recall)
        prec = np.asarray(op_precision)
        # envelope: best precision at or beyond each operating recall
        idx = np.argsort(rec, kind="stable")
        rec_sorted = rec[idx]
        prec_env = np.maximum.accumulate(prec[idx][::-1])[::-1]
        for j, r in enumerate(recalls):
            k = np.searchsorted(rec_sorted, r - 1e-12, side="left")
            if k < rec_sorted.size:
                precisions[j] = prec_env[k]
    # correctly-rounded mean so equality against enumeration oracles is exact
    ap = math.fsum(precisions) / precisions.size
    return APResult(ap, precisions, recalls, tp, fp, n_gt - tp)


def ground_truths_at_difficulty(boxes_with_difficulty, difficulty: Difficulty):
    """GroundTruth list for one evaluation bucket.

    Takes (box, Difficulty) pairs; ground truths from harder buckets (or
    Ignored) are marked ignored, per devkit semantics.
    """
    out = []
    for box, diff in boxes_with_difficulty:
        ignored = diff == Difficulty.IGNORED or diff.rank > difficulty.rank
        out.append(GroundTruth(box=box, ignored=ignored))
    return out


def evaluate_frames(frame_dets, frame_gts, iou_thresh: float = 0.7, include_r0: bool = True):
    """AP over a frame collection.

    frame_dets / frame_gts are parallel lists (one entry per frame) of
    Detection and GroundTruth lists. Matching is per frame; the scored
    TP/FP lists are concatenated before the precision-recall sweep.
    """
    if len(frame_dets) != len(frame_gts):
        raise ValueError("detections and ground truths must cover the same frames")
    scored = []
    n_gt = 0
    for dets, gts in zip(frame_dets, frame_gts):
        labels, _ = match_detections(dets, gts, iou_thresh)
        n_gt += sum(1 for g in gts if not g.ignored)
        for det, lab in zip(dets, labels):
            if lab is MatchLabel.IGNORED:
                continue
            scored.append((det.score, lab is MatchLabel.TP))
    if n_gt == 0:
        raise NoGroundTruth("no active ground truths in any frame")
    return average_precision(scored, n_gt, include_r0=include_r0)
