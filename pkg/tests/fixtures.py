"""Shared fixture builders and brute-force oracles."""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from citruslens.dataset import SPECIES
from citruslens.geometry import BBox, Detection


def species_confusion_samples(per_class: int = 49) -> tuple[list[str], list[str]]:
    """Species predictions with 2 Tangelo->Tangerine and 1 Tangerine->Tangelo errors, all else correct."""
    truth, pred = [], []
    for name in SPECIES:
        truth += [name] * per_class
        pred += [name] * per_class
    start = {name: i * per_class for i, name in enumerate(SPECIES)}
    pred[start["Tangelo"]] = pred[start["Tangelo"] + 1] = "Tangerine"
    pred[start["Tangerine"]] = "Tangelo"
    return truth, pred


def pair_count_auc(scores, positive) -> Fraction:
    """Mann-Whitney by enumerating every positive/negative pair."""
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = Fraction(0)
    for a, b in itertools.product(pos, neg):
        wins += 1 if a > b else Fraction(1, 2) if a == b else 0
    return wins / (len(pos) * len(neg))


def brute_iou(a: BBox, b: BBox) -> float:
    inter_w = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    inter_h = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = inter_w * inter_h
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def brute_match(dets, gts, t):
    """Independent greedy matcher: for each detection by (-conf, index) pick best free same-class GT."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    taken = set()
    out = []
    for i in order:
        d = dets[i]
        best, best_iou = None, -1.0
        for j, (g, c) in enumerate(gts):
            if c != d.class_id or j in taken:
                continue
            v = brute_iou(d.bbox, g)
            if v >= t and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            taken.add(best)
        out.append((d.confidence, best is not None))
    return out


def brute_ap(scored, total_gt, mode="101-point"):
    """AP by explicit envelope integration over every rank cut-off."""
    ranked = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    hits = [scored[i][1] for i in ranked]
    rec, prec = [], []
    tp = 0
    for k, h in enumerate(hits, 1):
        tp += h
        rec.append(tp / total_gt)
        prec.append(tp / k)

    def envelope(r):
        vals = [p for rr, p in zip(rec, prec) if rr >= r - 1e-15]
        return max(vals) if vals else 0.0

    if mode == "101-point":
        points = [i / 100 for i in range(101)]
        # integer recall test avoids float drift at levels like 0.29
        vals = []
        for i in range(101):
            cands = [prec[k] for k in range(len(hits)) if 100 * sum(hits[: k + 1]) >= i * total_gt]
            vals.append(max(cands) if cands else 0.0)
        return sum(vals) / len(points)
    # all-points: sum of envelope over each recall step
    area, prev = 0.0, 0.0
    for r in sorted(set(rec)):
        if r > prev:
            area += (r - prev) * envelope(r)
            prev = r
    return area


def random_detection_instance(rng: np.random.Generator, n_classes: int | None = None):
    """One image: <= 10 GT boxes and <= 20 detections over 1-3 classes on a coarse grid."""
    n_classes = n_classes or int(rng.integers(1, 4))

    def box():
        x0, y0 = rng.integers(0, 40, size=2)
        w, h = rng.integers(1, 20, size=2)
        return BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))

    gts = [(box(), int(rng.integers(0, n_classes))) for _ in range(int(rng.integers(0, 11)))]
    dets = []
    for _ in range(int(rng.integers(0, 21))):
        if gts and rng.random() < 0.6:
            g, c = gts[int(rng.integers(0, len(gts)))]
            jx, jy = rng.integers(-3, 4, size=2)
            b = BBox(g.x_min + jx, g.y_min + jy, g.x_max + jx + int(rng.integers(0, 3)), g.y_max + jy)
        else:
            b, c = box(), int(rng.integers(0, n_classes))
        conf = float(rng.choice([0.1, 0.25, 0.5, 0.75, 0.9, rng.random()]))
        dets.append(Detection(b, conf, c))
    return dets, gts, n_classes
