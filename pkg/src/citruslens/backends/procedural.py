"""Deterministic colour-rule backends.

These stand in for trained models in tests and demos. Every output is a pure
function of pixel content, and each rule is simple enough to check with a
brute-force oracle:

* detection: pixels whose hue falls in the fruit range form a binary mask;
  4-connected components above a minimum pixel count become detections with
  confidence equal to the filled fraction of their bounding box;
* classification: the mean fruit hue is scored against one hue band per
  species;
* segmentation: each pixel whose hue falls in a disease band takes that
  band's class id.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..dataset import DISEASES, SPECIES, LabelSet
from ..geometry import BBox, Detection
from ..imaging import as_rgb, rgb_to_hsv
from .base import BackendDescriptor, ClassDistribution, MaskMap

VERSION = "procedural-1"


@dataclass(frozen=True)
class HueBand:
    name: str
    lo: float  # degrees, inclusive
    hi: float  # degrees, exclusive

    @property
    def center(self) -> float:
        return (self.lo + self.hi) / 2.0


FRUIT_HUE = (0.0, 60.0)
FRUIT_MIN_SAT = 0.4
FRUIT_MIN_VAL = 0.4

# order follows SPECIES
SPECIES_BANDS = (
    HueBand("Tangerine", 12.0, 24.0),
    HueBand("Navel", 24.0, 36.0),
    HueBand("Blood Orange", 0.0, 12.0),
    HueBand("Bergamot", 48.0, 60.0),
    HueBand("Tangelo", 36.0, 48.0),
)

# class id = position + 1 in DISEASES
DISEASE_BANDS = (
    HueBand("Citrus canker", 75.0, 120.0),
    HueBand("Black spot", 120.0, 165.0),
    HueBand("Sooty mould", 165.0, 210.0),
    HueBand("Blue-green mould", 210.0, 255.0),
    HueBand("Citrus greening", 255.0, 300.0),
)
DISEASE_MIN_SAT = 0.4
DISEASE_MIN_VAL = 0.25

FOUR_CONNECTIVITY = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def fruit_mask(image: np.ndarray) -> np.ndarray:
    hue, sat, val = rgb_to_hsv(as_rgb(image))
    lo, hi = FRUIT_HUE
    return (hue >= lo) & (hue < hi) & (sat >= FRUIT_MIN_SAT) & (val >= FRUIT_MIN_VAL)


def disease_index(image: np.ndarray) -> np.ndarray:
    """Per-pixel disease class id, 0 where no band applies."""
    hue, sat, val = rgb_to_hsv(as_rgb(image))
    chromatic = (sat >= DISEASE_MIN_SAT) & (val >= DISEASE_MIN_VAL)
    out = np.zeros(hue.shape, dtype=np.uint8)
    for cid, band in enumerate(DISEASE_BANDS, start=1):
        out[chromatic & (hue >= band.lo) & (hue < band.hi)] = cid
    return out


class ProceduralDetector:
    def __init__(self, min_area: int = 100):
        self.min_area = int(min_area)
        self.descriptor = BackendDescriptor("procedural-detect", "detect", VERSION, 0)

    def ping(self) -> dict:
        return {"task": "detect", "version": VERSION, "model_size_bytes": 0}

    def detect(self, image, image_id: str | None = None) -> list[Detection]:
        mask = fruit_mask(image)
        labelled, n = ndimage.label(mask, structure=FOUR_CONNECTIVITY)
        if n == 0:
            return []
        sizes = np.bincount(labelled.ravel(), minlength=n + 1)
        out = []
        for comp, sl in enumerate(ndimage.find_objects(labelled), start=1):
            if sl is None or sizes[comp] < self.min_area:
                continue
            ys, xs = sl
            box = BBox(xs.start, ys.start, xs.stop, ys.stop)
            confidence = min(1.0, sizes[comp] / box.area)
            out.append(Detection(box, float(confidence), 0))
        return out


def species_distribution(mean_hue: float | None, labels: LabelSet = SPECIES, sigma: float = 4.0) -> ClassDistribution:
    if mean_hue is None:
        n = len(labels)
        return ClassDistribution(labels, tuple([1.0 / n] * n))
    centers = np.array([b.center for b in SPECIES_BANDS])
    logits = -((mean_hue - centers) ** 2) / (2.0 * sigma**2)
    w = np.exp(logits - logits.max())
    return ClassDistribution(labels, tuple(w / w.sum()))


class ProceduralClassifier:
    def __init__(self, sigma: float = 4.0):
        self.sigma = float(sigma)
        self.descriptor = BackendDescriptor("procedural-classify", "classify", VERSION, 0)

    def ping(self) -> dict:
        return {"task": "classify", "version": VERSION, "model_size_bytes": 0}

    def classify(self, image, image_id: str | None = None) -> ClassDistribution:
        rgb = as_rgb(image)
        mask = fruit_mask(rgb)
        if not mask.any():
            return species_distribution(None)
        hue, _, _ = rgb_to_hsv(rgb)
        return species_distribution(float(hue[mask].mean()), sigma=self.sigma)


class ProceduralSegmenter:
    def __init__(self):
        self.descriptor = BackendDescriptor("procedural-segment", "segment", VERSION, 0)

    def ping(self) -> dict:
        return {"task": "segment", "version": VERSION, "model_size_bytes": 0}

    def segment(self, image, image_id: str | None = None) -> MaskMap:
        return MaskMap(disease_index(image), DISEASES)
