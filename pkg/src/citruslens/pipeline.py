"""Detect → filter/NMS → count → crop → classify ∥ segment → overlay → report.

:func:`analyze` runs one image through the backends and returns a
:class:`PipelineReport` (and the annotated overlay when requested). Crops are
written as ``{image_id}_{index}.png`` under ``config.crops_dir``. Findings are
numbered from 1 in descending detection confidence, ties going to the
leftmost box.

A per-crop inference failure is recorded on that finding and the others
carry on; ``BackendUnavailable`` aborts the whole analysis.
"""
from __future__ import annotations

import json
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .backends.base import BackendDescriptor, ClassDistribution, MaskMap
from .backends.registry import ResolvedBackends
from .errors import BackendError, BackendUnavailable, ZeroAreaCrop
from .geometry import BBox, CropRegion, crop_region, nms
from .imaging import as_rgb, write_png

SCHEMA_VERSION = "1"
STAGES = ("detect", "filter_nms", "crop", "classify_segment", "overlay", "assemble")


@dataclass(frozen=True)
class PipelineConfig:
    confidence_threshold: float = 0.402
    nms_iou_threshold: float = 0.5
    crop_padding: int = 8
    crops_dir: str = "crops"
    emit_overlay: bool = True
    parallel_fanout: bool = True
    presence_epsilon: float = 0.005
    max_in_flight: int = 8
    overlay_alpha: float = 0.45

    def __post_init__(self) -> None:
        for name in ("confidence_threshold", "nms_iou_threshold", "presence_epsilon", "overlay_alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if int(self.crop_padding) != self.crop_padding or self.crop_padding < 0:
            raise ValueError(f"crop_padding must be a non-negative integer, got {self.crop_padding}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    @classmethod
    def from_mapping(cls, config: Mapping[str, Any]) -> "PipelineConfig":
        """Pick the pipeline keys out of a flat config, ignoring the rest."""
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for k, v in config.items():
            if k not in known:
                continue
            default = getattr(cls, k)
            if isinstance(default, bool):
                kwargs[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            else:
                kwargs[k] = type(default)(v)
        return cls(**kwargs)


@dataclass(frozen=True)
class StageTiming:
    name: str
    wall_ms: float


@dataclass(frozen=True)
class SpeciesResult:
    label: str | None
    confidence: float | None
    distribution: dict[str, float]

    @classmethod
    def from_distribution(cls, dist: ClassDistribution) -> "SpeciesResult":
        return cls(dist.label, dist.confidence, dist.as_dict())


@dataclass(frozen=True)
class DiseaseResult:
    present: tuple[str, ...]
    pixel_fractions: dict[str, float]

    @classmethod
    def from_mask(cls, mask: MaskMap, epsilon: float) -> "DiseaseResult":
        fr = mask.fractions()
        names = mask.labels.names
        present = tuple(names[c] for c in range(1, len(names)) if fr[c] > epsilon)
        return cls(present, {n: float(f) for n, f in zip(names, fr)})


EMPTY_SPECIES = SpeciesResult(None, None, {})
EMPTY_DISEASE = DiseaseResult((), {})


@dataclass(frozen=True)
class OrangeFinding:
    index: int
    bbox: BBox
    det_confidence: float
    species: SpeciesResult
    disease: DiseaseResult
    crop_path: str | None
    branch_ms: dict[str, float] = field(default_factory=dict, compare=False)
    error: dict[str, str] | None = None
    # runtime only, not serialized
    crop: CropRegion | None = field(default=None, compare=False, repr=False)
    mask: MaskMap | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class PipelineReport:
    image_id: str
    image_width: int
    image_height: int
    findings: tuple[OrangeFinding, ...]
    stages: tuple[StageTiming, ...]
    total_ms: float
    backends: tuple[BackendDescriptor, ...] = ()
    schema_version: str = SCHEMA_VERSION

    @property
    def count(self) -> int:
        return len(self.findings)

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.image_width, self.image_height

    def stage_ms(self, name: str) -> float:
        return next(s.wall_ms for s in self.stages if s.name == name)


# ------------------------------------------------------------------ overlay

DISEASE_COLORS = (
    (0, 0, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 255, 255),
    (0, 90, 255),
    (140, 255, 0),
)


@dataclass(frozen=True)
class OverlayStyle:
    box_color: tuple[int, int, int] = (255, 255, 255)
    box_width: int = 2
    text_color: tuple[int, int, int] = (255, 255, 255)
    text_offset: int = 3
    alpha: float = 0.45
    disease_colors: tuple[tuple[int, int, int], ...] = DISEASE_COLORS


@lru_cache(maxsize=1)
def _font():
    return ImageFont.load_default()


def box_pixel_rect(bbox: BBox, dims: tuple[int, int]) -> tuple[int, int, int, int]:
    """Half-open integer pixel rectangle covered by a box, clamped to the image."""
    w, h = dims
    return (
        max(0, math.floor(bbox.x_min)),
        max(0, math.floor(bbox.y_min)),
        min(w, math.ceil(bbox.x_max)),
        min(h, math.ceil(bbox.y_max)),
    )


def label_text(finding: OrangeFinding) -> str:
    sp = finding.species
    if sp.label is None:
        return "unclassified"
    return f"{sp.label} p={sp.confidence:.2f}"


def label_rect(finding: OrangeFinding, dims: tuple[int, int], style: OverlayStyle = OverlayStyle()) -> tuple[int, int, int, int]:
    """Half-open pixel rectangle the label text may touch."""
    x0, y0, _, _ = box_pixel_rect(finding.bbox, dims)
    origin = (x0 + style.text_offset, y0 + style.text_offset)
    scratch = ImageDraw.Draw(Image.new("RGB", (1, 1)))
    l, t, r, b = scratch.textbbox(origin, label_text(finding), font=_font())
    return l, t, r + 1, b + 1


def tint(src: np.ndarray, color: Sequence[int], alpha: float) -> np.ndarray:
    """Alpha-blend ``color`` over ``src`` pixels, rounding to nearest."""
    out = (1.0 - alpha) * src.astype(np.float64) + alpha * np.asarray(color, dtype=np.float64)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def compose_overlay(image, findings: Sequence[OrangeFinding], style: OverlayStyle = OverlayStyle()) -> np.ndarray:
    """Draw boxes, species labels and tinted disease pixels.

    Disease tint uses each finding's crop mask, restricted to its detection
    box. Every pixel outside all detection boxes is left untouched.
    """
    src = as_rgb(image)
    if not findings:
        return src.copy()
    h, w = src.shape[:2]
    out = src.copy()
    inside = np.zeros((h, w), dtype=bool)
    for f in findings:
        x0, y0, x1, y1 = box_pixel_rect(f.bbox, (w, h))
        inside[y0:y1, x0:x1] = True
        if f.mask is None or f.crop is None:
            continue
        cx0, cy0, cx1, cy1 = f.crop.pixel_bounds()
        # overlap of the detection box with the crop, in crop coordinates
        ox0, oy0, ox1, oy1 = max(x0, cx0), max(y0, cy0), min(x1, cx1), min(y1, cy1)
        if ox1 <= ox0 or oy1 <= oy0:
            continue
        sub = f.mask.data[oy0 - cy0 : oy1 - cy0, ox0 - cx0 : ox1 - cx0]
        if not sub.any():
            continue
        window = out[oy0:oy1, ox0:ox1]
        for cid in np.unique(sub[sub > 0]):
            sel = sub == cid
            color = style.disease_colors[int(cid) % len(style.disease_colors)]
            window[sel] = tint(window[sel], color, style.alpha)
    canvas = Image.fromarray(out)
    draw = ImageDraw.Draw(canvas)
    for f in findings:
        x0, y0, x1, y1 = box_pixel_rect(f.bbox, (w, h))
        if x1 <= x0 or y1 <= y0:
            continue
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=style.box_color, width=style.box_width)
        draw.text((x0 + style.text_offset, y0 + style.text_offset), label_text(f), fill=style.text_color, font=_font())
    drawn = np.asarray(canvas)
    return np.where(inside[..., None], drawn, src)


# ----------------------------------------------------------------- analysis

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]+")


def safe_stem(image_id: str) -> str:
    """Filesystem-safe form of an image id."""
    return _UNSAFE.sub("_", str(image_id)).strip(".") or "image"


def crop_filename(image_id: str, index: int) -> str:
    return f"{safe_stem(image_id)}_{index}.png"


def _ms(t0: float, t1: float) -> float:
    return max(0.0, (t1 - t0) * 1000.0)


def _timed(fn, *args):
    t0 = time.perf_counter()
    try:
        return fn(*args), None, _ms(t0, time.perf_counter())
    except BackendUnavailable:
        raise
    except BackendError as exc:
        return None, exc, _ms(t0, time.perf_counter())


def analyze(
    image,
    image_id: str,
    config: PipelineConfig,
    backends: ResolvedBackends,
) -> tuple[PipelineReport, np.ndarray | None]:
    """Run the full pipeline on one RGB image.

    Returns:
        ``(report, overlay)``; ``overlay`` is None unless ``config.emit_overlay``.
    """
    t_start = time.perf_counter()
    rgb = as_rgb(image)
    h, w = rgb.shape[:2]
    stages: list[StageTiming] = []

    t0 = time.perf_counter()
    dets = backends.detector.detect(rgb, str(image_id))
    t1 = time.perf_counter()
    stages.append(StageTiming("detect", _ms(t0, t1)))

    t0 = t1
    kept = [d for d in dets if d.confidence >= config.confidence_threshold]
    kept = nms(kept, config.nms_iou_threshold)
    kept.sort(key=lambda d: (-d.confidence, d.bbox.x_min))
    t1 = time.perf_counter()
    stages.append(StageTiming("filter_nms", _ms(t0, t1)))

    t0 = t1
    crops_dir = Path(config.crops_dir)
    crops_dir.mkdir(parents=True, exist_ok=True)
    crops: list[tuple[CropRegion | None, np.ndarray | None, str | None, dict | None]] = []
    for index, det in enumerate(kept, start=1):
        try:
            region = crop_region(det.bbox, (w, h), config.crop_padding)
        except ZeroAreaCrop as exc:
            crops.append((None, None, None, {"stage": "crop", "message": f"{exc.code}: {exc}"}))
            continue
        x0, y0, x1, y1 = region.pixel_bounds()
        pixels = np.ascontiguousarray(rgb[y0:y1, x0:x1])
        path = crops_dir / crop_filename(image_id, index)
        write_png(path, pixels)
        crops.append((region, pixels, str(path), None))
    t1 = time.perf_counter()
    stages.append(StageTiming("crop", _ms(t0, t1)))

    t0 = t1
    branches = _run_branches(crops, image_id, config, backends)
    t1 = time.perf_counter()
    stages.append(StageTiming("classify_segment", _ms(t0, t1)))

    findings = []
    for index, (det, (region, _, path, crop_err), (cls_out, seg_out)) in enumerate(
        zip(kept, crops, branches), start=1
    ):
        dist, cls_exc, cls_ms = cls_out
        mask, seg_exc, seg_ms = seg_out
        error = crop_err
        failed = [(s, e) for s, e in (("classify", cls_exc), ("segment", seg_exc)) if e is not None]
        if failed and error is None:
            error = {
                "stage": failed[0][0],
                "message": "; ".join(f"{s}: {e.code}: {e}" for s, e in failed),
            }
        findings.append(
            OrangeFinding(
                index=index,
                bbox=det.bbox,
                det_confidence=det.confidence,
                species=SpeciesResult.from_distribution(dist) if dist is not None else EMPTY_SPECIES,
                disease=DiseaseResult.from_mask(mask, config.presence_epsilon) if mask is not None else EMPTY_DISEASE,
                crop_path=path,
                branch_ms={"classify": cls_ms, "segment": seg_ms},
                error=error,
                crop=region,
                mask=mask,
            )
        )

    overlay = None
    if config.emit_overlay:
        t0 = time.perf_counter()
        overlay = compose_overlay(rgb, findings, OverlayStyle(alpha=config.overlay_alpha))
        stages.append(StageTiming("overlay", _ms(t0, time.perf_counter())))

    t0 = time.perf_counter()
    descriptors = tuple(backends.descriptors)
    t1 = time.perf_counter()
    stages.append(StageTiming("assemble", _ms(t0, t1)))
    report = PipelineReport(
        image_id=str(image_id),
        image_width=w,
        image_height=h,
        findings=tuple(findings),
        stages=tuple(stages),
        total_ms=_ms(t_start, time.perf_counter()),
        backends=descriptors,
    )
    return report, overlay


_SKIPPED = (None, None, 0.0)


def _run_branches(crops, image_id, config: PipelineConfig, backends: ResolvedBackends):
    """Classify and segment every crop; results come back in crop order."""
    jobs = []
    for index, (_, pixels, _, _) in enumerate(crops, start=1):
        jobs.append((pixels, f"{image_id}_{index}"))
    if not jobs:
        return []
    cls, seg = backends.classifier.classify, backends.segmenter.segment

    if not config.parallel_fanout:
        out = []
        for pixels, crop_id in jobs:
            if pixels is None:
                out.append((_SKIPPED, _SKIPPED))
                continue
            out.append((_timed(cls, pixels, crop_id), _timed(seg, pixels, crop_id)))
        return out

    workers = min(config.max_in_flight, 2 * len(jobs))
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fanout") as pool:
        futures = []
        for pixels, crop_id in jobs:
            if pixels is None:
                futures.append((None, None))
                continue
            futures.append((pool.submit(_timed, cls, pixels, crop_id), pool.submit(_timed, seg, pixels, crop_id)))
        out, abort = [], None
        for fc, fs in futures:
            if fc is None:
                out.append((_SKIPPED, _SKIPPED))
                continue
            pair = []
            for fut in (fc, fs):
                try:
                    pair.append(fut.result())
                except BackendUnavailable as exc:
                    abort = abort or exc
                    pair.append(_SKIPPED)
            out.append(tuple(pair))
    if abort is not None:
        raise abort
    return out


# ------------------------------------------------------------ serialization


def _r(v: float | None) -> float | None:
    if v is None:
        return None
    v = round(float(v), 6)
    return 0.0 if v == 0 else v


def report_to_dict(report: PipelineReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "image_id": report.image_id,
        "image_width": report.image_width,
        "image_height": report.image_height,
        "count": report.count,
        "stages": [{"name": s.name, "wall_ms": _r(s.wall_ms)} for s in report.stages],
        "total_ms": _r(report.total_ms),
        "backends": [d.to_dict() for d in report.backends],
        "findings": [
            {
                "index": f.index,
                "bbox_xyxy": [_r(v) for v in f.bbox.as_tuple()],
                "det_confidence": _r(f.det_confidence),
                "species": {
                    "label": f.species.label,
                    "confidence": _r(f.species.confidence),
                    "distribution": {k: _r(v) for k, v in f.species.distribution.items()},
                },
                "disease": {
                    "present": list(f.disease.present),
                    "pixel_fractions": {k: _r(v) for k, v in f.disease.pixel_fractions.items()},
                },
                "crop_path": f.crop_path,
                "branch_ms": {k: _r(v) for k, v in f.branch_ms.items()},
                "error": dict(f.error) if f.error is not None else None,
            }
            for f in report.findings
        ],
    }


def report_to_json(report: PipelineReport) -> str:
    """Canonical JSON: fixed key order, floats rounded to 6 decimals, 2-space indent."""
    return json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n"


def report_from_dict(doc: Mapping[str, Any]) -> PipelineReport:
    findings = []
    for f in doc["findings"]:
        sp, ds = f["species"], f["disease"]
        findings.append(
            OrangeFinding(
                index=int(f["index"]),
                bbox=BBox(*f["bbox_xyxy"]),
                det_confidence=f["det_confidence"],
                species=SpeciesResult(sp["label"], sp["confidence"], dict(sp["distribution"])),
                disease=DiseaseResult(tuple(ds["present"]), dict(ds["pixel_fractions"])),
                crop_path=f["crop_path"],
                branch_ms=dict(f.get("branch_ms") or {}),
                error=dict(f["error"]) if f.get("error") is not None else None,
            )
        )
    return PipelineReport(
        image_id=doc["image_id"],
        image_width=int(doc["image_width"]),
        image_height=int(doc["image_height"]),
        findings=tuple(findings),
        stages=tuple(StageTiming(s["name"], s["wall_ms"]) for s in doc["stages"]),
        total_ms=doc["total_ms"],
        backends=tuple(
            BackendDescriptor(b["id"], b["task"], b["version"], b.get("model_size_bytes")) for b in doc["backends"]
        ),
        schema_version=doc["schema_version"],
    )


def report_from_json(text: str) -> PipelineReport:
    return report_from_dict(json.loads(text))


@lru_cache(maxsize=1)
def report_schema() -> dict:
    """The published JSON schema for report version "1"."""
    text = resources.files("citruslens").joinpath("schemas/report_v1.schema.json").read_text()
    return json.loads(text)


def validate_report(doc: Mapping[str, Any] | str) -> None:
    """Raise ``jsonschema.ValidationError`` unless ``doc`` matches the report schema."""
    import jsonschema

    if isinstance(doc, str):
        doc = json.loads(doc)
    jsonschema.validate(doc, report_schema(), cls=jsonschema.Draft202012Validator)
    if doc["count"] != len(doc["findings"]):
        raise jsonschema.ValidationError("count does not match the number of findings")
