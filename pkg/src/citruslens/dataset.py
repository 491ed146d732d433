"""Annotated datasets: COCO / YOLO ingestion, splits and k-fold partitions.

Splits are keyed on a stable hash of each image id combined with the seed,
so the same multiset of images and the same seed always give the same
partition no matter how the files were enumerated.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence, TypeVar

from .errors import (
    ClassOutOfRange,
    EmptyDataset,
    InvalidK,
    InvalidNormalizedCoord,
    MalformedAnnotation,
    OrphanLabelFile,
    UnknownImageRef,
)
from .geometry import BBox, COCO_XYWH, CORNER_XYXY, YOLO_NORM_CXCYWH, convert

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp")
BOX_TOLERANCE_PX = 1.0


@dataclass(frozen=True)
class LabelSet:
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("a label set needs at least one name")
        if any(not isinstance(n, str) or not n.strip() for n in names):
            raise ValueError(f"label names must be non-empty strings: {names}")
        if len(set(names)) != len(names):
            raise ValueError(f"label names must be unique: {names}")

    def __len__(self) -> int:
        return len(self.names)

    def __getitem__(self, i: int) -> str:
        return self.names[i]

    def __iter__(self):
        return iter(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


SPECIES = LabelSet(("Tangerine", "Navel", "Blood Orange", "Bergamot", "Tangelo"))
DISEASES = LabelSet(
    (
        "background",
        "Citrus canker",
        "Black spot",
        "Sooty mould",
        "Blue-green mould",
        "Citrus greening",
    )
)
DETECTION_LABELS = LabelSet(("orange",))


@dataclass(frozen=True)
class AnnotatedImage:
    image_id: str
    file_path: str
    width: int
    height: int
    boxes: tuple[tuple[BBox, int], ...] = ()
    class_label: int | None = None
    mask_path: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.width <= 0 or self.height <= 0:
            raise MalformedAnnotation(
                f"image {self.image_id!r}: dimensions must be positive, got {self.width}x{self.height}"
            )
        tol = BOX_TOLERANCE_PX
        for box, _ in self.boxes:
            if (
                box.x_min < -tol
                or box.y_min < -tol
                or box.x_max > self.width + tol
                or box.y_max > self.height + tol
            ):
                raise MalformedAnnotation(
                    f"image {self.image_id!r}: box {box.as_tuple()} lies outside "
                    f"{self.width}x{self.height}"
                )


@dataclass(frozen=True)
class ManifestEntry:
    """Minimal dataset item for manifests that carry no annotations."""

    image_id: str
    file_path: str


@dataclass(frozen=True)
class SplitSpec:
    train_pct: int = 80
    test_pct: int = 15
    val_pct: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        pcts = (self.train_pct, self.test_pct, self.val_pct)
        if any(int(p) != p or p < 0 for p in pcts) or sum(pcts) != 100:
            raise ValueError(f"split percentages must be non-negative integers summing to 100, got {pcts}")

    @classmethod
    def parse(cls, ratios: str, seed: int = 0) -> "SplitSpec":
        """Parse ``"80:15:5"``."""
        parts = ratios.split(":")
        if len(parts) != 3:
            raise ValueError(f"ratios must look like 80:15:5, got {ratios!r}")
        try:
            a, b, c = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"ratios must be integers, got {ratios!r}") from None
        return cls(a, b, c, seed)


# --------------------------------------------------------------------- COCO


def _require(obj: Any, key: str, where: str) -> Any:
    if not isinstance(obj, dict) or key not in obj:
        raise MalformedAnnotation(f"{where}: missing required field {key!r}")
    return obj[key]


def _number(v: Any, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise MalformedAnnotation(f"{what} must be a finite number, got {v!r}")
    return float(v)


def parse_coco(document: str | bytes | dict) -> tuple[list[AnnotatedImage], LabelSet]:
    """Parse a COCO detection document.

    Only the minimal field subset is read (images: id/file_name/width/height;
    annotations: image_id/category_id/bbox; categories: id/name). Unknown
    fields are ignored. Category ids are remapped to a dense 0-based index in
    ascending id order.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedAnnotation(f"not valid JSON: {exc}") from None
    else:
        doc = document
    if not isinstance(doc, dict):
        raise MalformedAnnotation("COCO document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise MalformedAnnotation(f"COCO document needs a {key!r} array")

    cats = []
    for i, cat in enumerate(doc["categories"]):
        cid = _require(cat, "id", f"categories[{i}]")
        name = _require(cat, "name", f"categories[{i}]")
        cats.append((cid, str(name)))
    try:
        cats.sort(key=lambda c: c[0])
    except TypeError:
        raise MalformedAnnotation("category ids must be mutually comparable") from None
    cat_index = {cid: i for i, (cid, _) in enumerate(cats)}
    if len(cat_index) != len(cats):
        raise MalformedAnnotation("duplicate category id")
    if not cats:
        raise MalformedAnnotation("COCO document has no categories")
    try:
        labels = LabelSet(tuple(name for _, name in cats))
    except ValueError as exc:
        raise MalformedAnnotation(str(exc)) from None

    order: list[str] = []
    meta: dict[str, dict] = {}
    for i, img in enumerate(doc["images"]):
        where = f"images[{i}]"
        iid = str(_require(img, "id", where))
        if iid in meta:
            raise MalformedAnnotation(f"{where}: duplicate image id {iid!r}")
        width = _require(img, "width", where)
        height = _require(img, "height", where)
        if isinstance(width, bool) or not isinstance(width, int) or isinstance(height, bool) or not isinstance(height, int):
            raise MalformedAnnotation(f"{where}: width/height must be integers")
        meta[iid] = {
            "file_name": str(_require(img, "file_name", where)),
            "width": width,
            "height": height,
            "class_label": img.get("class_label"),
            "mask_path": img.get("mask_path"),
        }
        order.append(iid)

    boxes: dict[str, list[tuple[BBox, int]]] = {iid: [] for iid in order}
    for i, ann in enumerate(doc["annotations"]):
        where = f"annotations[{i}]"
        iid = str(_require(ann, "image_id", where))
        cid = _require(ann, "category_id", where)
        bbox = _require(ann, "bbox", where)
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise MalformedAnnotation(f"{where}: bbox must be [x, y, width, height]")
        x, y, w, h = (_number(v, f"{where}.bbox") for v in bbox)
        if w < 0 or h < 0:
            raise MalformedAnnotation(f"{where}: negative bbox width/height {bbox}")
        if iid not in boxes:
            raise UnknownImageRef(f"{where}: references unknown image id {iid!r}")
        if cid not in cat_index:
            raise MalformedAnnotation(f"{where}: unknown category id {cid!r}")
        boxes[iid].append((BBox(*convert((x, y, w, h), COCO_XYWH, CORNER_XYXY)), cat_index[cid]))

    images = []
    for iid in order:
        m = meta[iid]
        images.append(
            AnnotatedImage(
                image_id=iid,
                file_path=m["file_name"],
                width=m["width"],
                height=m["height"],
                boxes=tuple(boxes[iid]),
                class_label=m["class_label"],
                mask_path=m["mask_path"],
            )
        )
    return images, labels


def to_coco_dict(images: Sequence[AnnotatedImage], labels: LabelSet) -> dict:
    out_images, out_anns = [], []
    ann_id = 1
    for img in images:
        entry: dict[str, Any] = {
            "id": img.image_id,
            "file_name": img.file_path,
            "width": img.width,
            "height": img.height,
        }
        if img.class_label is not None:
            entry["class_label"] = img.class_label
        if img.mask_path is not None:
            entry["mask_path"] = img.mask_path
        out_images.append(entry)
        for box, cid in img.boxes:
            x, y, w, h = convert(box.as_tuple(), CORNER_XYXY, COCO_XYWH)
            out_anns.append(
                {
                    "id": ann_id,
                    "image_id": img.image_id,
                    "category_id": cid + 1,
                    "bbox": [x, y, w, h],
                    "area": w * h,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    cats = [{"id": i + 1, "name": name} for i, name in enumerate(labels.names)]
    return {"images": out_images, "annotations": out_anns, "categories": cats}


def to_coco(images: Sequence[AnnotatedImage], labels: LabelSet) -> str:
    """Serialize back to COCO JSON (category ids become 1-based)."""
    return json.dumps(to_coco_dict(images, labels), indent=2)


# --------------------------------------------------------------------- YOLO


def read_names(path: str | Path) -> LabelSet:
    """Read a YOLO names file: one class name per line."""
    lines = Path(path).read_text().splitlines()
    return LabelSet(tuple(line.strip() for line in lines if line.strip()))


def parse_yolo_line(line: str, width: int, height: int, names: LabelSet) -> tuple[BBox, int]:
    parts = line.split()
    if len(parts) != 5:
        raise MalformedAnnotation(f"YOLO line needs 5 fields 'class cx cy w h', got {line!r}")
    try:
        cid_f = float(parts[0])
        coords = tuple(float(p) for p in parts[1:])
    except ValueError:
        raise MalformedAnnotation(f"non-numeric YOLO line {line!r}") from None
    if cid_f != int(cid_f) or cid_f < 0:
        raise MalformedAnnotation(f"YOLO class id must be a non-negative integer in {line!r}")
    cid = int(cid_f)
    if cid >= len(names):
        raise ClassOutOfRange(f"class id {cid} out of range for {len(names)} names")
    for v in coords:
        if not 0.0 <= v <= 1.0:
            raise InvalidNormalizedCoord(f"normalized coordinate {v} outside [0, 1] in {line!r}")
    x0, y0, x1, y1 = convert(coords, YOLO_NORM_CXCYWH, CORNER_XYXY, (width, height))
    return BBox(x0, y0, x1, y1), cid


def format_yolo_line(box: BBox, class_id: int, width: int, height: int) -> str:
    cx, cy, w, h = convert(box.as_tuple(), CORNER_XYXY, YOLO_NORM_CXCYWH, (width, height))
    return f"{class_id} {cx:.6f} {cy:.6f} {w:.6f} {h:.6f}"


def _image_size(path: Path) -> tuple[int, int]:
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def _index_images(images_dir: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(images_dir.iterdir()):
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
            found.setdefault(p.stem, p)
    return found


def parse_yolo(labels_dir: str | Path, images_dir: str | Path, names: LabelSet) -> list[AnnotatedImage]:
    """Load a YOLO-format dataset.

    Every image in ``images_dir`` becomes an :class:`AnnotatedImage`; images
    without a label file get zero boxes. A label file with no paired image is
    an error.
    """
    labels_dir, images_dir = Path(labels_dir), Path(images_dir)
    images = _index_images(images_dir)
    label_files = {p.stem: p for p in sorted(labels_dir.glob("*.txt"))}
    for stem, p in label_files.items():
        if stem not in images:
            raise OrphanLabelFile(f"label file {p} has no paired image in {images_dir}")

    out = []
    for stem in sorted(images):
        path = images[stem]
        width, height = _image_size(path)
        boxes = []
        if stem in label_files:
            for line in label_files[stem].read_text().splitlines():
                if line.strip():
                    boxes.append(parse_yolo_line(line, width, height, names))
        out.append(AnnotatedImage(stem, str(path), width, height, tuple(boxes)))
    return out


def write_yolo(images: Sequence[AnnotatedImage], labels_dir: str | Path) -> None:
    labels_dir = Path(labels_dir)
    labels_dir.mkdir(parents=True, exist_ok=True)
    for img in images:
        lines = [format_yolo_line(b, c, img.width, img.height) for b, c in img.boxes]
        stem = Path(img.file_path).stem or img.image_id
        (labels_dir / f"{stem}.txt").write_text("".join(line + "\n" for line in lines))


# ------------------------------------------------------------ split / kfold

T = TypeVar("T")


def _shuffle_key(image_id: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}\x00{image_id}".encode("utf-8")).digest()


def seeded_order(items: Iterable[T], seed: int) -> list[T]:
    """Permutation keyed on ``(seed, image_id)``, independent of input order."""
    items = list(items)
    ids = [str(getattr(it, "image_id")) for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("image ids must be unique within a dataset")
    return [it for _, _, it in sorted(zip((_shuffle_key(i, seed) for i in ids), ids, items), key=lambda t: (t[0], t[1]))]


def _round_half_up(n: int, pct: int) -> int:
    # floor(n * pct / 100 + 1/2) in exact integer arithmetic
    return (2 * n * pct + 100) // 200


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    train = min(n, _round_half_up(n, spec.train_pct))
    test = min(n - train, _round_half_up(n, spec.test_pct))
    return train, test, n - train - test


def split(dataset: Sequence[T], spec: SplitSpec) -> tuple[list[T], list[T], list[T]]:
    """Partition into (train, test, val) by a seeded permutation.

    Train and test sizes are rounded half-up from their percentages and the
    remainder goes to validation, so the three sizes always sum to N.
    """
    if len(dataset) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    ordered = seeded_order(dataset, spec.seed)
    n_train, n_test, _ = split_sizes(len(ordered), spec)
    return (
        ordered[:n_train],
        ordered[n_train : n_train + n_test],
        ordered[n_train + n_test :],
    )


def kfold(dataset: Sequence[T], k: int, seed: int = 0) -> list[tuple[list[T], list[T]]]:
    """k contiguous folds over the seeded permutation, sizes differing by at most one."""
    n = len(dataset)
    if int(k) != k or k < 2:
        raise InvalidK(f"k must be an integer >= 2, got {k}")
    if n == 0:
        raise EmptyDataset("cannot partition an empty dataset")
    if k > n:
        raise InvalidK(f"k must satisfy 2 <= k <= N={n}, got {k}")
    ordered = seeded_order(dataset, seed)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(ordered[start : start + size])
        start += size
    out = []
    for i in range(k):
        train = [it for j, f in enumerate(folds) if j != i for it in f]
        out.append((train, folds[i]))
    return out


# ---------------------------------------------------------------- manifests


@dataclass
class Manifest:
    name: str
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            **self.meta,
            "count": len(self.entries),
            "images": [{"image_id": e.image_id, "file_path": e.file_path} for e in self.entries],
        }
        return json.dumps(doc, indent=2) + "\n"


def load_items(path: str | Path) -> list:
    """Load dataset items for splitting from a COCO file, a manifest, a text list or a directory.

    * ``*.json`` with ``images``/``annotations``/``categories``: COCO.
    * ``*.json`` with an ``images`` list of ``{image_id, file_path}``: a manifest.
    * ``*.txt``: one image path per line; the file stem is the image id.
    * a directory: every image file in it, or in its ``images/`` child.
    """
    path = Path(path)
    if path.is_dir():
        root = path / "images" if (path / "images").is_dir() else path
        return [ManifestEntry(stem, str(p)) for stem, p in sorted(_index_images(root).items())]
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and "annotations" in doc and "categories" in doc:
            return parse_coco(doc)[0]
        if isinstance(doc, dict) and isinstance(doc.get("images"), list):
            try:
                return [ManifestEntry(str(e["image_id"]), str(e["file_path"])) for e in doc["images"]]
            except (KeyError, TypeError):
                raise MalformedAnnotation(f"{path}: manifest entries need image_id and file_path") from None
        raise MalformedAnnotation(f"{path}: neither a COCO document nor a manifest")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    return [ManifestEntry(Path(ln).stem, ln) for ln in lines]
