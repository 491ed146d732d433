"""Backend contract shared by procedural and remote implementations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..dataset import LabelSet
from ..geometry import Detection

TASKS = ("detect", "classify", "segment")


@dataclass(frozen=True)
class ClassDistribution:
    labels: LabelSet
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != len(self.labels):
            raise ValueError(f"{len(probs)} probabilities for {len(self.labels)} labels")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1]: {probs}")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValueError(f"probabilities must sum to 1 within 1e-6, got {sum(probs)}")

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def label(self) -> str:
        return self.labels[self.argmax]

    @property
    def confidence(self) -> float:
        return self.probs[self.argmax]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels.names, self.probs))


@dataclass(frozen=True, eq=False)
class MaskMap:
    data: np.ndarray  # (H, W) class ids, 0 = background
    labels: LabelSet

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= len(self.labels)):
            raise ValueError(f"mask values must be < {len(self.labels)}")
        object.__setattr__(self, "data", arr.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    def fractions(self) -> np.ndarray:
        counts = np.bincount(self.data.ravel(), minlength=len(self.labels))
        return counts / max(1, self.data.size)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MaskMap)
            and self.labels == other.labels
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class BackendDescriptor:
    id: str
    task: str
    version: str
    model_size_bytes: int | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task": self.task,
            "version": self.version,
            "model_size_bytes": self.model_size_bytes,
        }


class Detector(Protocol):
    descriptor: BackendDescriptor

    def ping(self) -> dict: ...

    def detect(self, image: np.ndarray, image_id: str | None = None) -> list[Detection]: ...


class Classifier(Protocol):
    descriptor: BackendDescriptor

    def ping(self) -> dict: ...

    def classify(self, image: np.ndarray, image_id: str | None = None) -> ClassDistribution: ...


class Segmenter(Protocol):
    descriptor: BackendDescriptor

    def ping(self) -> dict: ...

    def segment(self, image: np.ndarray, image_id: str | None = None) -> MaskMap: ...
