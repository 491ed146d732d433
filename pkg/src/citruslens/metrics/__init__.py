"""Evaluation metrics for classification, detection and segmentation."""
from .classification import (
    ClassificationReport,
    ConfusionMatrix,
    binary_auc,
    classification_report,
    confusion_matrix,
    ovr_auc,
    roc_auc_ovr,
    roc_curve,
)
from .detection import (
    ALL_POINTS,
    COCO_IOU_THRESHOLDS,
    POINTS_101,
    ConfidenceCurve,
    ImageEval,
    MapResult,
    PRCurve,
    average_precision,
    collect_flags,
    confidence_curves,
    map_at,
    match_detections,
    pr_curve,
    precision_recall_at,
)
from .segmentation import SegReport, aggregate_seg, seg_report

__all__ = [
    "ALL_POINTS",
    "COCO_IOU_THRESHOLDS",
    "POINTS_101",
    "ClassificationReport",
    "ConfidenceCurve",
    "ConfusionMatrix",
    "ImageEval",
    "MapResult",
    "PRCurve",
    "SegReport",
    "aggregate_seg",
    "average_precision",
    "binary_auc",
    "classification_report",
    "collect_flags",
    "confidence_curves",
    "confusion_matrix",
    "map_at",
    "match_detections",
    "ovr_auc",
    "pr_curve",
    "precision_recall_at",
    "roc_auc_ovr",
    "roc_curve",
    "seg_report",
]
