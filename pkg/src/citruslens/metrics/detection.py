"""Detection metrics: matching, PR curves, AP / mAP and confidence curves.

Conventions:

* a detection matches a ground-truth box of the same class when
  ``IoU >= threshold`` (inclusive); detections are visited by descending
  confidence and claim the best unclaimed box;
* AP integrates the right-max precision envelope, either over every
  operating point (``"all-points"``) or sampled at recall 0, 0.01, ..., 1
  (``"101-point"``, the COCO rule);
* mAP50-95 averages mAP over IoU thresholds 0.50, 0.55, ..., 0.95.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import EmptyGrid, NoGroundTruth
from ..geometry import BBox, Detection, iou

ALL_POINTS = "all-points"
POINTS_101 = "101-point"
COCO_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
# area buckets in px^2; COCO's "small" bucket is folded into "medium"
AREA_BUCKETS = {"medium": (0.0, 96.0**2), "large": (96.0**2, math.inf)}
DEFAULT_CONFIDENCE_GRID = tuple(round(i / 1000, 3) for i in range(1001))

GroundTruth = tuple[BBox, int]


@dataclass(frozen=True)
class MatchResult:
    flags: list[tuple[Detection, bool]]  # (detection, is_tp) in confidence order
    unmatched_gt: int
    matched_gt: dict[int, int] = field(default_factory=dict)  # det position -> gt index


def _confidence_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_threshold: float,
    gt_ignore: Sequence[bool] | None = None,
) -> MatchResult:
    """Greedy one-to-one matching of detections to ground truth in one image.

    ``gt_ignore`` marks boxes that may absorb a detection but do not count
    (used for area-bucketed AP); a detection only falls back to an ignored
    box when no countable box qualifies.
    """
    ignore = list(gt_ignore) if gt_ignore is not None else [False] * len(gts)
    claimed = [False] * len(gts)
    flags: list[tuple[Detection, bool]] = []
    matched_gt: dict[int, int] = {}
    for pos, i in enumerate(_confidence_order(dets)):
        det = dets[i]
        best, best_iou, best_ignored = -1, -1.0, True
        for g, (box, cid) in enumerate(gts):
            if claimed[g] or cid != det.class_id:
                continue
            v = iou(det.bbox, box)
            if v < iou_threshold:
                continue
            # countable boxes beat ignored ones, then higher IoU, then lower index
            if (best_ignored and not ignore[g]) or (ignore[g] == best_ignored and v > best_iou):
                best, best_iou, best_ignored = g, v, ignore[g]
        if best >= 0:
            claimed[best] = True
            matched_gt[pos] = best
        flags.append((det, best >= 0))
    unmatched = sum(1 for g in range(len(gts)) if not claimed[g] and not ignore[g])
    return MatchResult(flags, unmatched, matched_gt)


def _ranked(scored: Iterable[tuple[float, bool]]) -> list[bool]:
    items = list(scored)
    order = sorted(range(len(items)), key=lambda i: (-items[i][0], i))
    return [bool(items[i][1]) for i in order]


def _scored(flags: Iterable) -> list[tuple[float, bool]]:
    out = []
    for item in flags:
        first, is_tp = item
        conf = first.confidence if isinstance(first, Detection) else float(first)
        out.append((conf, bool(is_tp)))
    return out


def average_precision(
    flags: Iterable,
    total_gt: int,
    interpolation: str = POINTS_101,
) -> float:
    """AP of a ranked TP/FP sequence.

    Args:
        flags: ``(confidence, is_tp)`` or ``(Detection, is_tp)`` pairs pooled
            over the whole dataset for one class.
        total_gt: number of ground-truth boxes of that class.
        interpolation: ``"101-point"`` or ``"all-points"``.
    """
    if total_gt <= 0:
        raise NoGroundTruth("average precision needs at least one ground-truth box")
    if interpolation not in (ALL_POINTS, POINTS_101):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    ranked = _ranked(_scored(flags))
    if not ranked:
        return 0.0
    tp = np.cumsum(ranked, dtype=np.int64)
    n = np.arange(1, len(ranked) + 1)
    precision = tp / n
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == ALL_POINTS:
        gained = np.diff(np.concatenate(([0], tp)))
        return float(np.sum(gained * envelope) / total_gt)
    # recall >= k/100  <=>  100 * tp >= k * total_gt, kept in integers
    total = 0.0
    for k in range(101):
        idx = int(np.searchsorted(100 * tp, k * total_gt, side="left"))
        if idx < len(tp):
            total += envelope[idx]
    return float(total / 101)


@dataclass(frozen=True)
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision)
    iou_threshold: float | None = None
    class_id: int | None = None


def pr_curve(flags: Iterable, total_gt: int, iou_threshold: float | None = None, class_id: int | None = None) -> PRCurve:
    """Raw cumulative (recall, precision) at every rank cut-off."""
    if total_gt <= 0:
        raise NoGroundTruth("a PR curve needs at least one ground-truth box")
    ranked = _ranked(_scored(flags))
    pts, tp = [], 0
    for i, hit in enumerate(ranked, start=1):
        tp += hit
        pts.append((tp / total_gt, tp / i))
    return PRCurve(pts, iou_threshold, class_id)


@dataclass(frozen=True)
class ImageEval:
    """Detections and ground truth for one image."""

    detections: Sequence[Detection]
    ground_truth: Sequence[GroundTruth]


@dataclass(frozen=True)
class MapResult:
    per_threshold: dict[float, float]
    per_class: dict[float, dict[int, float]]
    aggregate: float
    excluded_classes: tuple[int, ...] = ()

    def to_dict(self, labels=None) -> dict:
        def name(c):
            return labels[c] if labels is not None else str(c)

        return {
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "per_class": {
                f"{t:.2f}": {name(c): v for c, v in pc.items()} for t, pc in self.per_class.items()
            },
            "aggregate": self.aggregate,
            "excluded_classes": [name(c) for c in self.excluded_classes],
        }


def _as_image_evals(images) -> list[ImageEval]:
    out = []
    for im in images:
        out.append(im if isinstance(im, ImageEval) else ImageEval(*im))
    return out


def collect_flags(
    images: Sequence[ImageEval],
    iou_threshold: float,
    class_id: int,
    area_range: tuple[float, float] | None = None,
) -> tuple[list[tuple[float, bool]], int]:
    """Pool ``(confidence, is_tp)`` for one class over a dataset, plus its GT count."""
    scored: list[tuple[float, bool]] = []
    total_gt = 0
    for im in images:
        dets = [d for d in im.detections if d.class_id == class_id]
        gts = [g for g in im.ground_truth if g[1] == class_id]
        if area_range is None:
            ignore = [False] * len(gts)
        else:
            lo, hi = area_range
            ignore = [not (lo <= b.area < hi) for b, _ in gts]
        total_gt += sum(1 for x in ignore if not x)
        res = match_detections(dets, gts, iou_threshold, ignore)
        for pos, (det, hit) in enumerate(res.flags):
            if hit and ignore[res.matched_gt[pos]]:
                continue
            if not hit and area_range is not None and not (area_range[0] <= det.bbox.area < area_range[1]):
                continue
            scored.append((det.confidence, hit))
    return scored, total_gt


def map_at(
    images,
    thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    interpolation: str = POINTS_101,
    area: str | None = None,
) -> MapResult:
    """mAP at each IoU threshold and its mean over thresholds.

    ``images`` is a sequence of :class:`ImageEval` or ``(detections,
    ground_truth)`` pairs. Classes that have detections but no ground truth
    are excluded from the mean and listed in ``excluded_classes``.
    """
    images = _as_image_evals(images)
    if not thresholds:
        raise ValueError("need at least one IoU threshold")
    area_range = AREA_BUCKETS[area] if area is not None else None
    gt_classes = sorted({cid for im in images for _, cid in im.ground_truth})
    det_classes = {d.class_id for im in images for d in im.detections}
    if not gt_classes:
        raise NoGroundTruth("no ground-truth boxes in any image")
    per_threshold: dict[float, float] = {}
    per_class: dict[float, dict[int, float]] = {}
    excluded = set(det_classes - set(gt_classes))
    for t in thresholds:
        aps = {}
        for c in gt_classes:
            scored, total = collect_flags(images, t, c, area_range)
            if total == 0:
                excluded.add(c)
                continue
            aps[c] = average_precision(scored, total, interpolation)
        if not aps:
            raise NoGroundTruth("no class has ground truth in the requested area range")
        per_class[t] = aps
        per_threshold[t] = float(np.mean(list(aps.values())))
    aggregate = float(np.mean(list(per_threshold.values())))
    return MapResult(per_threshold, per_class, aggregate, tuple(sorted(excluded)))


@dataclass(frozen=True)
class ConfidenceCurve:
    kind: str
    points: list[tuple[float, float]]  # (threshold, value)
    empty: list[bool]  # no detection at or above the threshold
    optimal_threshold: float | None = None
    optimal_value: float | None = None


def _prf_at(confs: np.ndarray, hits: np.ndarray, total_gt: int, t: float) -> tuple[float, float, float, bool]:
    sel = confs >= t
    n = int(sel.sum())
    tp = int(hits[sel].sum())
    if n == 0:
        precision = 1.0
    else:
        precision = tp / n
    recall = tp / total_gt
    f1 = 2 * tp / (n + total_gt) if (n + total_gt) else 0.0
    return precision, recall, f1, n == 0


def confidence_curves(
    flags: Iterable,
    total_gt: int,
    kind: str = "f1",
    grid: Sequence[float] = DEFAULT_CONFIDENCE_GRID,
) -> ConfidenceCurve:
    """Precision or F1 as a function of the confidence cut-off.

    At each grid threshold ``t`` only detections with confidence >= t are
    kept. An empty selection has precision 1.0 and is flagged. For
    ``kind="f1"`` the arg-max threshold is reported, ties going to the lowest
    threshold.
    """
    if kind not in ("precision", "f1", "recall"):
        raise ValueError(f"kind must be 'precision', 'recall' or 'f1', got {kind!r}")
    if total_gt <= 0:
        raise NoGroundTruth("confidence curves need at least one ground-truth box")
    grid = [float(t) for t in grid]
    if not grid:
        raise EmptyGrid("confidence grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0 or grid[-1] > 1:
        raise ValueError("grid must be strictly increasing within [0, 1]")
    scored = _scored(flags)
    confs = np.array([c for c, _ in scored], dtype=float)
    hits = np.array([h for _, h in scored], dtype=bool)
    points, empty = [], []
    best_t, best_v = None, -1.0
    for t in grid:
        p, r, f, is_empty = _prf_at(confs, hits, total_gt, t)
        v = {"precision": p, "recall": r, "f1": f}[kind]
        points.append((t, v))
        empty.append(is_empty)
        if kind == "f1" and f > best_v:
            best_t, best_v = t, f
    if kind != "f1":
        best_v = None
    return ConfidenceCurve(kind, points, empty, best_t, best_v)


def precision_recall_at(flags: Iterable, total_gt: int, threshold: float) -> tuple[float, float, float]:
    """(precision, recall, F1) for detections with confidence >= threshold."""
    scored = _scored(flags)
    confs = np.array([c for c, _ in scored], dtype=float)
    hits = np.array([h for _, h in scored], dtype=bool)
    p, r, f, _ = _prf_at(confs, hits, total_gt, threshold)
    return p, r, f
