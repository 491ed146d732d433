"""Orange detection, species classification and disease segmentation pipeline,
with the detection, classification and segmentation metrics used to evaluate it."""
from .geometry import BBox, CropRegion, Detection, convert, crop_region, iou, nms

__version__ = "0.1.0"

__all__ = ["BBox", "CropRegion", "Detection", "convert", "crop_region", "iou", "nms", "__version__"]
