"""Boxes, IoU, non-maximum suppression and crop regions."""
import numpy as np

from citruslens import BBox, Detection, convert, crop_region, iou, nms

# %% Boxes are corner coordinates in pixels; width is x_max - x_min.
a = BBox(10, 10, 50, 50)
b = BBox(30, 30, 70, 70)
print("area", a.area, "iou", round(iou(a, b), 4))  # 400 / 2800 = 1/7

# %% Converting between corner, COCO and normalized YOLO layouts
print("xywh", convert(a.as_tuple(), "corner_xyxy", "coco_xywh"))
print("yolo", convert(a.as_tuple(), "corner_xyxy", "yolo_norm_cxcywh", image_dims=(100, 100)))

# %% NMS keeps the most confident box of each overlapping cluster, per class
dets = [
    Detection(BBox(0, 0, 10, 10), 0.9, 0),
    Detection(BBox(1, 1, 11, 11), 0.8, 0),  # IoU 0.68 with the first: removed
    Detection(BBox(1, 1, 11, 11), 0.7, 1),  # other class: kept
    Detection(BBox(40, 40, 50, 50), 0.6, 0),
]
for d in nms(dets, 0.5):
    print("kept", d.bbox.as_tuple(), d.confidence, d.class_id)

# %% Crops are padded and then clamped to the image
region = crop_region(BBox(90, 90, 110, 110), (100, 100), padding=5)
print("crop", region.bbox.as_tuple(), "pixels", region.pixel_bounds())

# %% IoU against a brute-force occupancy grid
rng = np.random.default_rng(0)
for _ in range(3):
    x0, y0 = (int(v) for v in rng.integers(0, 20, 2))
    p = BBox(x0, y0, x0 + int(rng.integers(1, 20)), y0 + int(rng.integers(1, 20)))
    q = BBox(5, 5, 25, 25)
    grid = np.zeros((2, 50, 50), bool)
    for k, box in enumerate((p, q)):
        grid[k, int(box.y_min) : int(box.y_max), int(box.x_min) : int(box.x_max)] = True
    cells = (grid[0] & grid[1]).sum() / (grid[0] | grid[1]).sum()
    print(p.as_tuple(), round(iou(p, q), 6), round(float(cells), 6))
