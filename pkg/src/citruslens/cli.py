"""Command line: ``analyze | serve | evaluate | split | crossval``.

Failures print one JSON line ``{"error": <code>, "message": ...}`` to stderr
and exit non-zero (2 when a backend is unavailable, 1 otherwise).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .dataset import (
    DISEASES,
    LabelSet,
    Manifest,
    SplitSpec,
    kfold,
    load_items,
    parse_coco,
    parse_yolo,
    read_names,
    split,
)
from .errors import BackendUnavailable, CitrusLensError, MalformedAnnotation
from .geometry import COCO_XYWH, CORNER_XYXY, YOLO_NORM_CXCYWH, BBox, Detection, convert
from .metrics.classification import classification_report, confusion_matrix
from .metrics.detection import (
    COCO_IOU_THRESHOLDS,
    ImageEval,
    collect_flags,
    confidence_curves,
    map_at,
    pr_curve,
    precision_recall_at,
)
from .metrics.segmentation import aggregate_seg, seg_report

EXIT_ERROR = 1
EXIT_BACKEND = 2


def load_config(path: str | None) -> dict:
    """Read the flat JSON config named by ``path`` or ``$PIPELINE_CONFIG``."""
    path = path or os.environ.get("PIPELINE_CONFIG")
    if not path:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or any(isinstance(v, (dict, list)) for v in doc.values()):
        raise ValueError(f"{path}: config must be a flat JSON object of scalar values")
    return doc


def _dump(doc: Any) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


# ------------------------------------------------------------------ analyze


def cmd_analyze(args) -> int:
    from .backends.registry import resolve_backends
    from .imaging import read_image, write_png
    from .pipeline import PipelineConfig, analyze, report_to_json

    config = load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.setdefault("crops_dir", str(out_dir / "crops"))
    pcfg = PipelineConfig.from_mapping({**config, "emit_overlay": True})
    backends = resolve_backends(config)
    image = read_image(args.image)
    image_id = Path(args.image).stem
    report, overlay = analyze(image, image_id, pcfg, backends)
    (out_dir / "report.json").write_text(report_to_json(report))
    write_png(out_dir / "overlay.png", overlay)
    print(json.dumps({"count": report.count, "report": str(out_dir / "report.json"), "overlay": str(out_dir / "overlay.png")}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    bind = os.environ.get("PIPELINE_BIND") or args.bind
    host, _, port = bind.rpartition(":")
    config = load_config(args.config)
    app = create_app(ServiceConfig.from_mapping(config))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


# ----------------------------------------------------------------- evaluate


def _load_label_file(path: str) -> tuple[LabelSet | None, dict[str, dict]]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or not isinstance(doc.get("samples"), list):
        raise MalformedAnnotation(f"{path}: expected {{'labels': [...], 'samples': [...]}}")
    labels = LabelSet(tuple(doc["labels"])) if doc.get("labels") else None
    samples = {}
    for s in doc["samples"]:
        if "image_id" not in s or "label" not in s:
            raise MalformedAnnotation(f"{path}: every sample needs image_id and label")
        samples[str(s["image_id"])] = s
    return labels, samples


def evaluate_classification(pred_path: str, truth_path: str) -> dict:
    labels, truth = _load_label_file(truth_path)
    plabels, pred = _load_label_file(pred_path)
    labels = labels or plabels
    if labels is None:
        raise MalformedAnnotation("no label list in truth or prediction file")
    missing = sorted(set(truth) - set(pred))
    if missing:
        raise MalformedAnnotation(f"no prediction for {len(missing)} images, e.g. {missing[0]!r}")
    ids = list(truth)
    t = [truth[i]["label"] for i in ids]
    p = [pred[i]["label"] for i in ids]
    cm = confusion_matrix(t, p, labels)
    scores = None
    if all("probs" in pred[i] for i in ids):
        scores = [pred[i]["probs"] for i in ids]
    report = classification_report(cm, scores, t if scores is not None else None)
    return {"task": "classification", "samples": len(ids), **report.to_dict()}


def _coco_category_index(doc: dict) -> dict:
    ids = sorted(c["id"] for c in doc["categories"])
    return {cid: i for i, cid in enumerate(ids)}


def _find_names(root: Path) -> Path:
    for name in ("classes.txt", "names.txt", "obj.names"):
        if (root / name).is_file():
            return root / name
    found = sorted(root.glob("*.names"))
    if found:
        return found[0]
    raise MalformedAnnotation(f"{root}: no names file (classes.txt, names.txt or *.names)")


def _load_truth(path: str):
    """Return (images, labels, coco_category_index or None)."""
    p = Path(path)
    if p.is_dir():
        labels = read_names(_find_names(p))
        images = parse_yolo(p / "labels", p / "images", labels)
        return images, labels, None
    doc = json.loads(p.read_text())
    images, labels = parse_coco(doc)
    return images, labels, _coco_category_index(doc)


def _load_predictions(path: str, fmt: str, images, cat_index) -> dict[str, list[Detection]]:
    by_id = {im.image_id: im for im in images}
    by_stem = {Path(im.file_path).stem: im.image_id for im in images}
    preds: dict[str, list[Detection]] = {iid: [] for iid in by_id}

    def resolve(key: str) -> str:
        if key in by_id:
            return key
        if key in by_stem:
            return by_stem[key]
        raise MalformedAnnotation(f"prediction for unknown image {key!r}")

    p = Path(path)
    if fmt == "coco":
        items = json.loads(p.read_text())
        if isinstance(items, dict):
            items = items.get("annotations", [])
        for d in items:
            iid = resolve(str(d["image_id"]))
            cid = d.get("category_id", 0)
            if cat_index is not None:
                if cid not in cat_index:
                    raise MalformedAnnotation(f"prediction with unknown category id {cid!r}")
                cid = cat_index[cid]
            box = BBox(*convert(d["bbox"], COCO_XYWH, CORNER_XYXY))
            preds[iid].append(Detection(box, float(d["score"]), int(cid)))
    elif fmt == "yolo":
        for f in sorted(p.glob("*.txt")):
            iid = resolve(f.stem)
            im = by_id[iid]
            for line in f.read_text().splitlines():
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 6:
                    raise MalformedAnnotation(f"{f}: prediction lines are 'class cx cy w h conf', got {line!r}")
                cx, cy, w, h = (float(v) for v in parts[1:5])
                box = BBox(*convert((cx, cy, w, h), YOLO_NORM_CXCYWH, CORNER_XYXY, (im.width, im.height)))
                preds[iid].append(Detection(box, float(parts[5]), int(parts[0])))
    elif fmt == "report":
        from .pipeline import report_from_json

        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        files += sorted(p.glob("*/report.json")) if p.is_dir() else []
        for f in files:
            report = report_from_json(f.read_text())
            iid = resolve(report.image_id)
            for finding in report.findings:
                preds[iid].append(Detection(finding.bbox, float(finding.det_confidence), 0))
    else:
        raise ValueError(f"unknown prediction format {fmt!r}")
    return preds


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])


def evaluate_detection(pred_path: str, truth_path: str, fmt: str, curves_dir: str | None = None) -> dict:
    images, labels, cat_index = _load_truth(truth_path)
    preds = _load_predictions(pred_path, fmt, images, cat_index)
    evals = [ImageEval(preds[im.image_id], list(im.boxes)) for im in images]
    coco = map_at(evals, COCO_IOU_THRESHOLDS)
    doc: dict[str, Any] = {
        "task": "detection",
        "images": len(images),
        "labels": list(labels.names),
        "mAP50": coco.per_threshold[0.5],
        "mAP75": coco.per_threshold[0.75],
        "mAP50-95": coco.aggregate,
        "per_threshold": {f"{t:.2f}": v for t, v in coco.per_threshold.items()},
        "ap50_per_class": {labels[c]: v for c, v in coco.per_class[0.5].items()},
        "excluded_classes": [labels[c] if c < len(labels) else str(c) for c in coco.excluded_classes],
    }
    for bucket in ("medium", "large"):
        try:
            doc[f"mAP50-95_{bucket}"] = map_at(evals, COCO_IOU_THRESHOLDS, area=bucket).aggregate
        except CitrusLensError:
            doc[f"mAP50-95_{bucket}"] = None

    # operating-point metrics pool every class at IoU 0.5
    flags, total = [], 0
    for c in sorted({cid for im in images for _, cid in im.boxes}):
        f, n = collect_flags(evals, 0.5, c)
        flags += f
        total += n
    f1_curve = confidence_curves(flags, total, "f1")
    p_curve = confidence_curves(flags, total, "precision")
    best = f1_curve.optimal_threshold
    precision, recall, f1 = precision_recall_at(flags, total, best)
    doc.update(
        {
            "optimal_confidence_threshold": best,
            "f1_max": f1_curve.optimal_value,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }
    )
    if curves_dir:
        out = Path(curves_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "pr_curve.csv", ("recall", "precision"), pr_curve(flags, total, 0.5).points)
        _write_csv(out / "f1_confidence.csv", ("confidence", "f1"), f1_curve.points)
        _write_csv(out / "precision_confidence.csv", ("confidence", "precision"), p_curve.points)
    return doc


def evaluate_segmentation(pred_path: str, truth_path: str) -> dict:
    from .imaging import decode_index_png

    pred_dir, truth_dir = Path(pred_path), Path(truth_path)
    truth_files = sorted(truth_dir.glob("*.png"))
    if not truth_files:
        raise MalformedAnnotation(f"{truth_dir}: no mask PNGs")
    reports = []
    for tf in truth_files:
        pf = pred_dir / tf.name
        if not pf.is_file():
            raise MalformedAnnotation(f"no predicted mask for {tf.name}")
        reports.append(
            seg_report(decode_index_png(pf.read_bytes()), decode_index_png(tf.read_bytes()), DISEASES)
        )
    return {
        "task": "segmentation",
        "images": len(reports),
        "micro": aggregate_seg(reports, "micro").to_dict(),
        "macro": aggregate_seg(reports, "macro").to_dict(),
    }


def cmd_evaluate(args) -> int:
    if args.task == "classification":
        doc = evaluate_classification(args.pred, args.truth)
    elif args.task == "detection":
        doc = evaluate_detection(args.pred, args.truth, args.format, args.curves_dir)
    else:
        doc = evaluate_segmentation(args.pred, args.truth)
    sys.stdout.write(_dump(doc))
    return 0


# ------------------------------------------------------------ split / kfold


def cmd_split(args) -> int:
    items = load_items(args.input)
    spec = SplitSpec.parse(args.ratios, args.seed)
    parts = split(items, spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": args.seed, "ratios": args.ratios}
    written = {}
    for name, part in zip(("train", "test", "val"), parts):
        path = out / f"{name}.json"
        path.write_text(Manifest(name, part, meta).to_json())
        written[name] = len(part)
    print(json.dumps(written))
    return 0


def cmd_crossval(args) -> int:
    items = load_items(args.input)
    folds = kfold(items, args.k, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = []
    for i, (train, val) in enumerate(folds):
        meta = {"seed": args.seed, "k": args.k, "fold": i}
        (out / f"fold{i}_train.json").write_text(Manifest(f"fold{i}_train", train, meta).to_json())
        (out / f"fold{i}_val.json").write_text(Manifest(f"fold{i}_val", val, meta).to_json())
        sizes.append({"train": len(train), "val": len(val)})
    print(json.dumps(sizes))
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citruslens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the pipeline on one image")
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="compute a metric report")
    p.add_argument("--task", required=True, choices=("detection", "classification", "segmentation"))
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--format", default="coco", choices=("coco", "yolo", "report"),
                   help="prediction format for detection")
    p.add_argument("--curves-dir", help="write PR / confidence curve CSVs here (detection)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="write train/test/val manifests")
    p.add_argument("--input", required=True)
    p.add_argument("--ratios", default="80:15:5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("crossval", help="write k-fold manifests")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_crossval)
    return parser


def _fail(code: str, message: str, status: int) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": " ".join(str(message).split())}) + "\n")
    return status


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackendUnavailable as exc:
        return _fail(exc.code, str(exc), EXIT_BACKEND)
    except CitrusLensError as exc:
        return _fail(exc.code, str(exc), EXIT_ERROR)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
