"""Per-pixel segmentation metrics over index masks (0 = background)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..dataset import LabelSet
from ..errors import EmptyList, ShapeMismatch

MICRO = "micro"
MACRO = "macro"


@dataclass(frozen=True)
class SegReport:
    labels: LabelSet
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    correct: int
    total: int
    iou: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    # per-class: value had a non-zero denominator
    iou_defined: np.ndarray
    precision_defined: np.ndarray
    recall_defined: np.ndarray
    present: np.ndarray  # class occurs in ground truth
    pixel_accuracy: float
    mean_iou: float | None

    def to_dict(self) -> dict:
        names = list(self.labels.names)

        def keyed(arr, defined=None):
            return {n: (float(v) if defined is None or defined[i] else None) for i, (n, v) in enumerate(zip(names, arr))}

        return {
            "labels": names,
            "pixel_accuracy": self.pixel_accuracy,
            "mean_iou": self.mean_iou,
            "per_class": {
                "iou": keyed(self.iou, self.iou_defined),
                "precision": keyed(self.precision, self.precision_defined),
                "recall": keyed(self.recall, self.recall_defined),
                "f1": keyed(self.f1, self.precision_defined & self.recall_defined),
                "present": {n: bool(p) for n, p in zip(names, self.present)},
            },
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ok = den > 0
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=ok)
    return out, ok


def _mean_iou(iou: np.ndarray, present: np.ndarray) -> float | None:
    cls = np.flatnonzero(present)
    cls = cls[cls != 0]
    if cls.size == 0:
        return None
    return float(np.mean(iou[cls]))


def _from_counts(labels: LabelSet, tp, fp, fn, correct: int, total: int) -> SegReport:
    tp, fp, fn = (np.asarray(a, dtype=np.int64) for a in (tp, fp, fn))
    iou, iou_ok = _safe_div(tp, tp + fp + fn)
    precision, p_ok = _safe_div(tp, tp + fp)
    recall, r_ok = _safe_div(tp, tp + fn)
    f1, _ = _safe_div(2 * precision * recall, precision + recall)
    present = (tp + fn) > 0
    return SegReport(
        labels=labels,
        tp=tp,
        fp=fp,
        fn=fn,
        correct=int(correct),
        total=int(total),
        iou=iou,
        precision=precision,
        recall=recall,
        f1=f1,
        iou_defined=iou_ok,
        precision_defined=p_ok,
        recall_defined=r_ok,
        present=present,
        pixel_accuracy=correct / total if total else 0.0,
        mean_iou=_mean_iou(iou, present),
    )


def _as_array(mask) -> np.ndarray:
    data = getattr(mask, "data", mask)
    return np.asarray(data)


def seg_report(pred, truth, labels: LabelSet) -> SegReport:
    """Compare two index masks (arrays or MaskMap-like objects with ``.data``)."""
    p = _as_array(pred)
    t = _as_array(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs truth {t.shape}")
    k = len(labels)
    p = p.astype(np.int64).ravel()
    t = t.astype(np.int64).ravel()
    if p.size and (p.min() < 0 or p.max() >= k or t.min() < 0 or t.max() >= k):
        raise ValueError(f"mask values must be class ids in [0, {k})")
    cm = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    return _from_counts(labels, tp, fp, fn, int(tp.sum()), int(p.size))


def aggregate_seg(reports: Sequence[SegReport], mode: str = MICRO) -> SegReport:
    """Dataset-level report.

    ``micro`` pools pixel counts before taking ratios. ``macro`` averages the
    per-image ratios, each over the images where that ratio is defined.
    """
    if not reports:
        raise EmptyList("no reports to aggregate")
    if mode not in (MICRO, MACRO):
        raise ValueError(f"mode must be 'micro' or 'macro', got {mode!r}")
    labels = reports[0].labels
    if any(r.labels != labels for r in reports):
        raise ValueError("reports use different label sets")
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    correct = sum(r.correct for r in reports)
    total = sum(r.total for r in reports)
    pooled = _from_counts(labels, tp, fp, fn, correct, total)
    if mode == MICRO or len(reports) == 1:
        return pooled

    def avg(attr: str, defined_attr: str) -> tuple[np.ndarray, np.ndarray]:
        vals = np.stack([getattr(r, attr) for r in reports])
        ok = np.stack([getattr(r, defined_attr) for r in reports])
        n = ok.sum(axis=0)
        s = np.where(ok, vals, 0.0).sum(axis=0)
        return _safe_div(s, n)

    iou, iou_ok = avg("iou", "iou_defined")
    precision, p_ok = avg("precision", "precision_defined")
    recall, r_ok = avg("recall", "recall_defined")
    f1_vals = np.stack([r.f1 for r in reports])
    f1_ok = np.stack([r.precision_defined & r.recall_defined for r in reports])
    f1, _ = _safe_div(np.where(f1_ok, f1_vals, 0.0).sum(axis=0), f1_ok.sum(axis=0))
    return SegReport(
        labels=labels,
        tp=pooled.tp,
        fp=pooled.fp,
        fn=pooled.fn,
        correct=pooled.correct,
        total=pooled.total,
        iou=iou,
        precision=precision,
        recall=recall,
        f1=f1,
        iou_defined=iou_ok,
        precision_defined=p_ok,
        recall_defined=r_ok,
        present=pooled.present,
        pixel_accuracy=float(np.mean([r.pixel_accuracy for r in reports])),
        mean_iou=_mean_iou(iou, pooled.present),
    )
