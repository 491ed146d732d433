"""Planted scenes for the procedural backends.

A scene is a black canvas with solid squares painted at known positions in
known species hues, optionally carrying a square disease patch. The plant
list is the ground truth for the scene.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .backends.procedural import DISEASE_BANDS, SPECIES_BANDS
from .dataset import SPECIES
from .geometry import BBox


def hsv_color(hue_deg: float, sat: float = 1.0, val: float = 1.0) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb((hue_deg % 360.0) / 360.0, sat, val)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def species_color(species: int | str) -> tuple[int, int, int]:
    idx = SPECIES.index(species) if isinstance(species, str) else species
    return hsv_color(SPECIES_BANDS[idx].center)


def disease_color(class_id: int) -> tuple[int, int, int]:
    """Colour for disease class ``class_id`` (1-based, 0 is background)."""
    return hsv_color(DISEASE_BANDS[class_id - 1].center, 1.0, 0.8)


@dataclass(frozen=True)
class Patch:
    class_id: int
    dx: int  # offset from the fruit's top-left corner
    dy: int
    size: int

    @property
    def area(self) -> int:
        return self.size * self.size


@dataclass(frozen=True)
class PlantedFruit:
    x: int
    y: int
    size: int
    species: int
    patch: Patch | None = None

    @property
    def bbox(self) -> BBox:
        return BBox(self.x, self.y, self.x + self.size, self.y + self.size)


def render_scene(width: int, height: int, fruits: list[PlantedFruit] | tuple[PlantedFruit, ...]) -> np.ndarray:
    img = np.zeros((height, width, 3), dtype=np.uint8)
    for f in fruits:
        img[f.y : f.y + f.size, f.x : f.x + f.size] = species_color(f.species)
        if f.patch is not None:
            p = f.patch
            y0, x0 = f.y + p.dy, f.x + p.dx
            img[y0 : y0 + p.size, x0 : x0 + p.size] = disease_color(p.class_id)
    return img


PLANTED_FRUITS = (
    PlantedFruit(60, 80, 90, SPECIES.index("Tangerine")),
    PlantedFruit(300, 120, 110, SPECIES.index("Navel"), Patch(3, 40, 40, 10)),
    PlantedFruit(420, 400, 100, SPECIES.index("Bergamot")),
)


def planted_scene(size: int = 640) -> tuple[np.ndarray, tuple[PlantedFruit, ...]]:
    """The standard 640×640 fixture: three disjoint squares, one with a 10×10 disease patch."""
    return render_scene(size, size, PLANTED_FRUITS), PLANTED_FRUITS
