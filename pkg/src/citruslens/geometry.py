"""Bounding-box arithmetic.

Internally every box is corner form ``(x_min, y_min, x_max, y_max)`` in
absolute, continuous pixel coordinates: a box covering pixel columns 30..79
is ``(30, 80)`` wide and has width 50, with no +1 adjustment (the COCO area
convention). Other conventions only appear at I/O boundaries through
:func:`convert`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidNormalizedCoord, ZeroAreaCrop

CORNER_XYXY = "corner_xyxy"
COCO_XYWH = "coco_xywh"
YOLO_NORM_CXCYWH = "yolo_norm_cxcywh"
FORMATS = (CORNER_XYXY, COCO_XYWH, YOLO_NORM_CXCYWH)


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(f"box corners out of order: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    @classmethod
    def from_points(cls, x0: float, y0: float, x1: float, y1: float) -> "BBox":
        """Build a box from two opposite corners given in any order."""
        return cls(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id}")


@dataclass(frozen=True)
class CropRegion:
    """A padded, clamped region of a source image."""

    bbox: BBox
    padding: int
    source_dims: tuple[int, int]

    def pixel_bounds(self) -> tuple[int, int, int, int]:
        """Integer ``(x0, y0, x1, y1)`` slice bounds covering the region.

        Fractional edges are rounded outward, then clamped to the image.
        """
        w, h = self.source_dims
        x0 = max(0, math.floor(self.bbox.x_min))
        y0 = max(0, math.floor(self.bbox.y_min))
        x1 = min(w, math.ceil(self.bbox.x_max))
        y1 = min(h, math.ceil(self.bbox.y_max))
        return x0, y0, x1, y1

    @property
    def pixel_size(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.pixel_bounds()
        return x1 - x0, y1 - y0


def intersection_area(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy class-wise non-maximum suppression.

    Detections are visited by descending confidence (ties: lower class id,
    then input order). A detection is dropped when its IoU with an already
    kept detection of the same class exceeds ``iou_threshold``.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, dets[i].class_id, i))
    kept: list[Detection] = []
    kept_by_class: dict[int, list[BBox]] = {}
    for i in order:
        det = dets[i]
        same = kept_by_class.setdefault(det.class_id, [])
        if any(iou(det.bbox, k) > iou_threshold for k in same):
            continue
        same.append(det.bbox)
        kept.append(det)
    return kept


def crop_region(bbox: BBox, image_dims: tuple[int, int], padding: int = 0) -> CropRegion:
    """Expand ``bbox`` by ``padding`` on every side and clamp it to the image.

    Raises:
        ZeroAreaCrop: the clamped region is empty (box outside the image).
    """
    width, height = image_dims
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_dims}")
    if padding < 0 or int(padding) != padding:
        raise ValueError(f"padding must be a non-negative integer, got {padding}")
    x0 = min(max(bbox.x_min - padding, 0.0), width)
    y0 = min(max(bbox.y_min - padding, 0.0), height)
    x1 = min(max(bbox.x_max + padding, 0.0), width)
    y1 = min(max(bbox.y_max + padding, 0.0), height)
    # compare the product too: subnormal extents can underflow to zero area
    if x1 - x0 <= 0 or y1 - y0 <= 0 or (x1 - x0) * (y1 - y0) <= 0:
        raise ZeroAreaCrop(f"box {bbox.as_tuple()} has no area inside a {width}x{height} image")
    return CropRegion(BBox(x0, y0, x1, y1), int(padding), (int(width), int(height)))


def _check_normalized(values: Iterable[float]) -> None:
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise InvalidNormalizedCoord(f"normalized coordinate {v} outside [0, 1]")


def convert(
    values: Sequence[float],
    src: str,
    dst: str,
    image_dims: tuple[int, int] | None = None,
) -> tuple[float, float, float, float]:
    """Convert a 4-tuple between box conventions.

    Args:
        values: the box in the ``src`` convention.
        src, dst: one of ``corner_xyxy``, ``coco_xywh``, ``yolo_norm_cxcywh``.
        image_dims: ``(width, height)``; required whenever either side is
            the normalized YOLO convention.
    """
    if src not in FORMATS or dst not in FORMATS:
        raise ValueError(f"unknown box format: {src!r} -> {dst!r}")
    if len(values) != 4:
        raise ValueError(f"a box has 4 values, got {len(values)}")
    a, b, c, d = (float(v) for v in values)
    if YOLO_NORM_CXCYWH in (src, dst):
        if image_dims is None:
            raise ValueError("image_dims is required for normalized coordinates")
        width, height = image_dims
        if width <= 0 or height <= 0:
            raise ValueError(f"image dimensions must be positive, got {image_dims}")

    if src == CORNER_XYXY:
        x0, y0, x1, y1 = a, b, c, d
    elif src == COCO_XYWH:
        if c < 0 or d < 0:
            raise ValueError(f"negative width/height in coco box {tuple(values)}")
        x0, y0, x1, y1 = a, b, a + c, b + d
    else:
        _check_normalized((a, b, c, d))
        cx, cy, w, h = a * width, b * height, c * width, d * height
        x0, y0, x1, y1 = cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0

    if dst == CORNER_XYXY:
        return (x0, y0, x1, y1)
    if dst == COCO_XYWH:
        return (x0, y0, x1 - x0, y1 - y0)
    return (
        (x0 + x1) / 2.0 / width,
        (y0 + y1) / 2.0 / height,
        (x1 - x0) / width,
        (y1 - y0) / height,
    )
