"""Classification metrics: confusion matrix, P/R/F1 and one-vs-rest ROC AUC."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from ..dataset import LabelSet
from ..errors import DegenerateClass, LengthMismatch, UnknownLabel


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    labels: LabelSet
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0

    def off_diagonal(self) -> dict[tuple[str, str], int]:
        """Non-zero off-diagonal cells as ``{(truth, pred): count}``."""
        out = {}
        n = len(self.labels)
        for t in range(n):
            for p in range(n):
                if t != p and self.counts[t, p]:
                    out[(self.labels[t], self.labels[p])] = int(self.counts[t, p])
        return out

    def to_dict(self) -> dict:
        return {"labels": list(self.labels.names), "counts": self.counts.tolist()}


def _resolve(label, labels: LabelSet) -> int:
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        if 0 <= label < len(labels):
            return int(label)
    elif isinstance(label, str) and label in labels.names:
        return labels.index(label)
    raise UnknownLabel(f"label {label!r} is not in {list(labels.names)}")


def confusion_matrix(truth: Sequence, pred: Sequence, labels: LabelSet) -> ConfusionMatrix:
    """Count ``(truth, pred)`` pairs. Labels may be names or indices."""
    if len(truth) != len(pred):
        raise LengthMismatch(f"{len(truth)} truth labels vs {len(pred)} predictions")
    if len(truth) == 0:
        raise LengthMismatch("need at least one sample")
    n = len(labels)
    t = np.fromiter((_resolve(x, labels) for x in truth), dtype=np.int64, count=len(truth))
    p = np.fromiter((_resolve(x, labels) for x in pred), dtype=np.int64, count=len(pred))
    counts = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(labels, counts)


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    # names of quantities that hit a zero denominator and were reported as 0
    undefined: tuple[str, ...] = ()


@dataclass(frozen=True)
class Aggregate:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassificationReport:
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro: Aggregate
    weighted: Aggregate
    roc_auc: float | None = None
    roc_auc_per_class: dict[str, float] = field(default_factory=dict)
    roc_auc_excluded: tuple[str, ...] = ()
    confusion: ConfusionMatrix | None = None

    def to_dict(self) -> dict:
        names = [m.label for m in self.per_class]
        doc = {
            "labels": names,
            "accuracy": self.accuracy,
            "per_class": {
                "precision": {m.label: m.precision for m in self.per_class},
                "recall": {m.label: m.recall for m in self.per_class},
                "f1": {m.label: m.f1 for m in self.per_class},
                "support": {m.label: m.support for m in self.per_class},
                "undefined": {m.label: list(m.undefined) for m in self.per_class if m.undefined},
            },
            "macro": vars(self.macro).copy(),
            "weighted": vars(self.weighted).copy(),
            "roc_auc": {
                "weighted": self.roc_auc,
                "per_class": dict(self.roc_auc_per_class),
                "excluded": list(self.roc_auc_excluded),
            },
        }
        if self.confusion is not None:
            doc["confusion_matrix"] = self.confusion.to_dict()
        return doc


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, False
    return num / den, True


def classification_report(
    cm: ConfusionMatrix,
    scores: Sequence[Sequence[float]] | None = None,
    truth: Sequence | None = None,
) -> ClassificationReport:
    """Per-class and aggregate metrics from a confusion matrix.

    ROC AUC (support-weighted, one-vs-rest) is filled in only when per-sample
    ``scores`` and the matching ``truth`` labels are supplied.
    """
    counts = cm.counts
    tp = np.diag(counts).astype(float)
    pred_total = counts.sum(axis=0).astype(float)
    support = counts.sum(axis=1)
    per_class = []
    for c, name in enumerate(cm.labels):
        undefined = []
        p, ok = _ratio(tp[c], pred_total[c])
        if not ok:
            undefined.append("precision")
        r, ok = _ratio(tp[c], float(support[c]))
        if not ok:
            undefined.append("recall")
        f, ok = _ratio(2 * p * r, p + r)
        if not ok:
            undefined.append("f1")
        per_class.append(ClassMetrics(name, p, r, f, int(support[c]), tuple(undefined)))

    def mean(vals: list[float], weights: np.ndarray | None = None) -> float:
        if weights is None:
            return float(np.mean(vals))
        tot = weights.sum()
        return float(np.dot(vals, weights) / tot) if tot else 0.0

    ps = [m.precision for m in per_class]
    rs = [m.recall for m in per_class]
    fs = [m.f1 for m in per_class]
    macro = Aggregate(mean(ps), mean(rs), mean(fs))
    w = support.astype(float)
    weighted = Aggregate(mean(ps, w), mean(rs, w), mean(fs, w))

    auc, auc_per_class, excluded = None, {}, ()
    if scores is not None:
        if truth is None or len(truth) != len(scores):
            raise LengthMismatch("scores need matching per-sample truth labels")
        arr = np.asarray(scores, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != len(cm.labels):
            raise ValueError(f"scores must be (n_samples, {len(cm.labels)})")
        if np.any(np.abs(arr.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("each score distribution must sum to 1 within 1e-6")
        result = ovr_auc(arr, truth, cm.labels)
        auc_per_class = {cm.labels[c]: float(v) for c, v in result.per_class.items()}
        excluded = tuple(cm.labels[c] for c in result.excluded)
        auc = result.aggregate("weighted") if result.per_class else None

    return ClassificationReport(
        tuple(per_class), cm.accuracy, macro, weighted, auc, auc_per_class, excluded, cm
    )


# ------------------------------------------------------------------ ROC AUC


def _doubled_ranks(values: np.ndarray) -> np.ndarray:
    """Twice the 1-based average ranks (ties share their mean rank), as integers."""
    n = len(values)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    doubled = np.empty(n, dtype=np.int64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # ranks i+1 .. j+1 averaged, doubled: (i+1) + (j+1)
        doubled[order[i : j + 1]] = i + j + 2
        i = j + 1
    return doubled


def binary_auc(scores: Sequence[float], positive: Sequence[bool]) -> Fraction:
    """Rank-statistic AUC: P(random positive outscores random negative), ties count 1/2.

    Returned as an exact fraction.
    """
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass(f"need positives and negatives, got {n_pos} and {n_neg}")
    rank_sum_2 = int(_doubled_ranks(s)[pos].sum())
    u2 = rank_sum_2 - n_pos * (n_pos + 1)
    return Fraction(u2, 2 * n_pos * n_neg)


@dataclass(frozen=True)
class OvrAuc:
    per_class: dict[int, Fraction]
    support: dict[int, int]
    excluded: tuple[int, ...]

    def aggregate(self, weighting: str = "weighted") -> float:
        if not self.per_class:
            raise DegenerateClass("no class has both positives and negatives")
        if weighting == "macro":
            return float(sum(self.per_class.values(), Fraction(0)) / len(self.per_class))
        if weighting == "weighted":
            tot = sum(self.support[c] for c in self.per_class)
            return float(sum((v * self.support[c] for c, v in self.per_class.items()), Fraction(0)) / tot)
        raise ValueError(f"weighting must be 'macro' or 'weighted', got {weighting!r}")


def ovr_auc(scores, truth: Sequence, labels: LabelSet) -> OvrAuc:
    """One-vs-rest AUC for every class; classes lacking positives or negatives are excluded."""
    arr = np.asarray(scores, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(labels):
        raise ValueError(f"scores must be (n_samples, {len(labels)})")
    if arr.shape[0] != len(truth):
        raise LengthMismatch(f"{arr.shape[0]} score rows vs {len(truth)} labels")
    t = np.array([_resolve(x, labels) for x in truth], dtype=np.int64)
    per_class, support, excluded = {}, {}, []
    for c in range(len(labels)):
        pos = t == c
        if pos.all() or not pos.any():
            excluded.append(c)
            continue
        per_class[c] = binary_auc(arr[:, c], pos)
        support[c] = int(pos.sum())
    return OvrAuc(per_class, support, tuple(excluded))


def roc_auc_ovr(scores, truth: Sequence, labels: LabelSet, weighting: str = "weighted") -> float:
    """Aggregated one-vs-rest ROC AUC (``macro`` or support-``weighted``).

    Degenerate classes are left out of the aggregate; use :func:`ovr_auc`
    to see which ones. Raises DegenerateClass when no class is usable.
    """
    return ovr_auc(scores, truth, labels).aggregate(weighting)


def roc_curve(scores: Sequence[float], positive: Sequence[bool]) -> list[tuple[float, float]]:
    """ROC points ``(fpr, tpr)`` from the highest threshold down, starting at (0, 0)."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass(f"need positives and negatives, got {n_pos} and {n_neg}")
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], pos[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    for i in range(len(s)):
        tp += int(pos[i])
        fp += int(not pos[i])
        if i + 1 == len(s) or s[i + 1] != s[i]:
            points.append((fp / n_neg, tp / n_pos))
    return points
