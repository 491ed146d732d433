"""Per-class IoU, pixel accuracy and micro versus macro aggregation."""
import numpy as np

from citruslens.dataset import DISEASES
from citruslens.metrics import aggregate_seg, seg_report

# %% Two images: one with a half-found lesion, one where the prediction is clean
truth_a = np.zeros((8, 8), np.uint8)
truth_a[:4, :4] = 1
pred_a = np.zeros_like(truth_a)
pred_a[:4, :2] = 1

truth_b = np.zeros((8, 8), np.uint8)
truth_b[6:, 6:] = 2
pred_b = np.zeros_like(truth_b)

ra = seg_report(pred_a, truth_a, DISEASES)
rb = seg_report(pred_b, truth_b, DISEASES)
print("image a: IoU", ra.iou[1], "pixel acc", ra.pixel_accuracy, "mean IoU", ra.mean_iou)
print("image b: IoU", rb.iou[2], "pixel acc", rb.pixel_accuracy, "mean IoU", rb.mean_iou)

# %% Micro pools pixel counts, macro averages per-image ratios
for mode in ("micro", "macro"):
    agg = aggregate_seg([ra, rb], mode)
    print(mode, "pixel acc", round(agg.pixel_accuracy, 4), "mean IoU", agg.mean_iou)
