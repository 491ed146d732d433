"""HTTP client for externally served models.

Wire protocol, one endpoint per backend:

``POST /infer``
    request ``{"task": ..., "image_b64": <PNG, base64>, "image_id": ...}``.
    ``detect`` answers ``{"detections": [{"bbox_xyxy": [x0, y0, x1, y1],
    "confidence": c, "class_id": n}]}``; ``classify`` answers
    ``{"labels": [...], "probs": [...]}``; ``segment`` answers
    ``{"width": w, "height": h, "mask_b64": <single-channel PNG, base64>}``.
``GET /ping``
    ``{"task": ..., "version": ..., "model_size_bytes": n | null}``.

Crops are sent as-is; resizing and normalisation are the server's business.
"""
from __future__ import annotations

import logging
import math
from typing import Any

import httpx
import numpy as np

from ..dataset import DISEASES, LabelSet
from ..errors import BackendUnavailable, InferenceTimeout, MalformedResponse, UndecodableImage
from ..geometry import BBox, Detection
from ..imaging import as_rgb, b64decode, b64encode_png, decode_index_png
from .base import BackendDescriptor, ClassDistribution, MaskMap

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 10.0
EXCERPT_CHARS = 200


def _excerpt(text: str) -> str:
    return text if len(text) <= EXCERPT_CHARS else text[:EXCERPT_CHARS] + "..."


def _malformed(msg: str, payload: Any) -> MalformedResponse:
    excerpt = _excerpt(payload if isinstance(payload, str) else repr(payload))
    log.warning("malformed backend response: %s; payload: %s", msg, excerpt)
    return MalformedResponse(f"{msg}; payload: {excerpt}")


class RemoteClient:
    """Thin wrapper over one backend endpoint. Safe to share between threads."""

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S, transport: httpx.BaseTransport | None = None):
        self.url = url.rstrip("/")
        self.timeout_s = float(timeout_s)
        self._http = httpx.Client(base_url=self.url, timeout=self.timeout_s, transport=transport)

    def close(self) -> None:
        self._http.close()

    def _request(self, method: str, path: str, **kwargs) -> Any:
        try:
            resp = self._http.request(method, path, **kwargs)
        except httpx.TimeoutException as exc:
            raise InferenceTimeout(f"{self.url}{path}: no answer within {self.timeout_s} s") from exc
        except httpx.TransportError as exc:
            raise BackendUnavailable(f"{self.url}{path}: {exc}") from exc
        if resp.status_code != 200:
            raise _malformed(f"{self.url}{path} returned HTTP {resp.status_code}", resp.text)
        try:
            return resp.json()
        except ValueError:
            raise _malformed(f"{self.url}{path} returned non-JSON", resp.text) from None

    def ping(self) -> dict:
        doc = self._request("GET", "/ping")
        if not isinstance(doc, dict) or "task" not in doc or "version" not in doc:
            raise _malformed("ping response needs 'task' and 'version'", doc)
        return doc

    def infer(self, task: str, image: np.ndarray, image_id: str | None) -> dict:
        body = {"task": task, "image_b64": b64encode_png(as_rgb(image)), "image_id": image_id or ""}
        doc = self._request("POST", "/infer", json=body)
        if not isinstance(doc, dict):
            raise _malformed("infer response must be a JSON object", doc)
        return doc


def _real(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


class _RemoteBackend:
    task = ""

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S, backend_id: str | None = None, client: RemoteClient | None = None):
        self.client = client or RemoteClient(url, timeout_s)
        self.descriptor = BackendDescriptor(backend_id or f"remote-{self.task}", self.task, "unknown")

    def ping(self) -> dict:
        doc = self.client.ping()
        if doc["task"] != self.task:
            raise _malformed(f"endpoint serves task {doc['task']!r}, expected {self.task!r}", doc)
        size = doc.get("model_size_bytes")
        self.descriptor = BackendDescriptor(
            self.descriptor.id,
            self.task,
            str(doc["version"]),
            int(size) if _real(size) else None,
        )
        return doc


class RemoteDetector(_RemoteBackend):
    task = "detect"

    def detect(self, image, image_id: str | None = None) -> list[Detection]:
        rgb = as_rgb(image)
        h, w = rgb.shape[:2]
        doc = self.client.infer("detect", rgb, image_id)
        items = doc.get("detections")
        if not isinstance(items, list):
            raise _malformed("detect response needs a 'detections' array", doc)
        out = []
        for item in items:
            try:
                coords = item["bbox_xyxy"]
                conf = item["confidence"]
                cid = item.get("class_id", 0)
            except (TypeError, KeyError):
                raise _malformed("detection needs 'bbox_xyxy' and 'confidence'", item) from None
            if not isinstance(coords, list) or len(coords) != 4 or not all(_real(v) for v in coords):
                raise _malformed("bbox_xyxy must be 4 finite numbers", item)
            if not _real(conf) or not 0.0 <= conf <= 1.0:
                raise _malformed("confidence must be a number in [0, 1]", item)
            if isinstance(cid, bool) or not isinstance(cid, int) or cid < 0:
                raise _malformed("class_id must be a non-negative integer", item)
            box = BBox.from_points(*(float(v) for v in coords))
            if box.x_min < 0 or box.y_min < 0 or box.x_max > w or box.y_max > h:
                raise _malformed(f"box outside the {w}x{h} image", item)
            out.append(Detection(box, float(conf), cid))
        return out


class RemoteClassifier(_RemoteBackend):
    task = "classify"

    def classify(self, image, image_id: str | None = None) -> ClassDistribution:
        doc = self.client.infer("classify", image, image_id)
        labels, probs = doc.get("labels"), doc.get("probs")
        if not isinstance(labels, list) or not isinstance(probs, list) or not all(_real(p) for p in probs):
            raise _malformed("classify response needs 'labels' and numeric 'probs'", doc)
        try:
            return ClassDistribution(LabelSet(tuple(labels)), tuple(probs))
        except ValueError as exc:
            raise _malformed(str(exc), doc) from None


class RemoteSegmenter(_RemoteBackend):
    task = "segment"

    def __init__(self, url: str, timeout_s: float = DEFAULT_TIMEOUT_S, backend_id: str | None = None, client: RemoteClient | None = None, labels: LabelSet = DISEASES):
        super().__init__(url, timeout_s, backend_id, client)
        self.labels = labels

    def segment(self, image, image_id: str | None = None) -> MaskMap:
        rgb = as_rgb(image)
        h, w = rgb.shape[:2]
        doc = self.client.infer("segment", rgb, image_id)
        mw, mh, data = doc.get("width"), doc.get("height"), doc.get("mask_b64")
        if not isinstance(data, str) or not isinstance(mw, int) or not isinstance(mh, int):
            raise _malformed("segment response needs integer 'width', 'height' and 'mask_b64'", doc)
        if (mw, mh) != (w, h):
            raise _malformed(f"mask declared {mw}x{mh} for a {w}x{h} image", doc)
        try:
            mask = decode_index_png(b64decode(data))
        except UndecodableImage as exc:
            raise _malformed(str(exc), doc) from None
        if mask.shape != (h, w):
            raise _malformed(f"decoded mask is {mask.shape[1]}x{mask.shape[0]}, expected {w}x{h}", doc)
        if mask.size and int(mask.max()) >= len(self.labels):
            raise _malformed(f"mask value {int(mask.max())} outside {len(self.labels)} classes", doc)
        return MaskMap(mask, self.labels)
