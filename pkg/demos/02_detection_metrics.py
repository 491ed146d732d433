"""Matching, AP, mAP and the confidence sweep on a small synthetic dataset."""
import numpy as np

from citruslens import BBox, Detection
from citruslens.metrics import ImageEval, collect_flags, confidence_curves, map_at, match_detections, pr_curve

rng = np.random.default_rng(7)

# %% Ground truth: a few fruits per image. Predictions: jittered copies plus clutter.
images = []
for _ in range(20):
    gts, dets = [], []
    for _ in range(int(rng.integers(1, 5))):
        x, y = rng.uniform(0, 500, 2)
        s = rng.uniform(20, 120)
        gts.append((BBox(x, y, x + s, y + s), 0))
        dx, dy = rng.normal(0, s * 0.08, 2)
        dets.append(Detection(BBox(x + dx, y + dy, x + s + dx, y + s + dy), float(rng.uniform(0.4, 1.0)), 0))
    for _ in range(int(rng.integers(0, 3))):
        x, y = rng.uniform(0, 500, 2)
        dets.append(Detection(BBox(x, y, x + 40, y + 40), float(rng.uniform(0.0, 0.6)), 0))
    images.append(ImageEval(dets, gts))

# %% Greedy matching on one image
m = match_detections(images[0].detections, images[0].ground_truth, 0.5)
print("image 0: TP flags", [hit for _, hit in m.flags], "missed GT", m.unmatched_gt)

# %% mAP over IoU 0.50:0.95
result = map_at(images)
print("mAP@0.5      ", round(result.per_threshold[0.5], 4))
print("mAP@0.75     ", round(result.per_threshold[0.75], 4))
print("mAP@0.5:0.95 ", round(result.aggregate, 4))

# %% Precision-recall curve and confidence sweep at IoU 0.5
flags, total_gt = collect_flags(images, 0.5, 0)
curve = pr_curve(flags, total_gt)
print("PR points:", len(curve.points), "final (recall, precision)", tuple(round(v, 3) for v in curve.points[-1]))
f1 = confidence_curves(flags, total_gt, "f1")
print("best F1", round(f1.optimal_value, 4), "at confidence", f1.optimal_threshold)
