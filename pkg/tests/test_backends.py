import colorsys
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citruslens.backends import (
    ClassDistribution,
    MaskMap,
    ProceduralClassifier,
    ProceduralDetector,
    ProceduralSegmenter,
    RemoteClassifier,
    RemoteDetector,
    RemoteSegmenter,
    register_backend,
    resolve_backends,
)
from citruslens.backends.procedural import SPECIES_BANDS, fruit_mask
from citruslens.dataset import DISEASES, SPECIES
from citruslens.errors import BackendUnavailable, InferenceTimeout, MalformedResponse, UnknownBackendId
from citruslens.geometry import BBox
from citruslens.imaging import b64decode, b64encode_png, decode_image, rgb_to_hsv
from citruslens.synthetic import disease_color, hsv_color, species_color


def canvas(w=200, h=200):
    return np.zeros((h, w, 3), np.uint8)


def bfs_components(mask):
    """4-connected components by breadth-first search: list of (pixel count, bbox)."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            q = deque([(y0, x0)])
            seen[y0, x0] = True
            pix = []
            while q:
                y, x = q.popleft()
                pix.append((y, x))
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        q.append((ny, nx))
            ys = [p[0] for p in pix]
            xs = [p[1] for p in pix]
            out.append((len(pix), (min(xs), min(ys), max(xs) + 1, max(ys) + 1)))
    return out


# ---- value types


def test_class_distribution_invariants():
    d = ClassDistribution(SPECIES, (0.7, 0.1, 0.1, 0.05, 0.05))
    assert d.label == "Tangerine" and d.confidence == 0.7
    with pytest.raises(ValueError):
        ClassDistribution(SPECIES, (0.5, 0.5))
    with pytest.raises(ValueError):
        ClassDistribution(SPECIES, (0.5, 0.1, 0.1, 0.1, 0.1))


def test_mask_map_invariants():
    m = MaskMap(np.array([[0, 5]]), DISEASES)
    assert (m.width, m.height) == (2, 1)
    with pytest.raises(ValueError):
        MaskMap(np.array([[6]]), DISEASES)


# ---- colour conversion


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_hsv_matches_colorsys(r, g, b):
    h, s, v = rgb_to_hsv(np.array([[[r, g, b]]], np.uint8))
    eh, es, ev = colorsys.rgb_to_hsv(r / 255, g / 255, b / 255)
    hue_err = abs(h[0, 0] - eh * 360) % 360
    assert min(hue_err, 360 - hue_err) < 1e-9
    assert s[0, 0] == pytest.approx(es, abs=1e-12) and v[0, 0] == pytest.approx(ev, abs=1e-12)


# ---- procedural detector


def test_black_image_has_no_detections():
    assert ProceduralDetector().detect(canvas()) == []


def test_single_square():
    img = canvas()
    img[30:80, 30:80] = species_color("Tangerine")
    dets = ProceduralDetector().detect(img)
    assert len(dets) == 1
    assert dets[0].bbox == BBox(30, 30, 80, 80)
    assert dets[0].confidence == 1.0


def test_min_area_and_fill_fraction():
    img = canvas()
    img[0:9, 0:9] = species_color(0)  # 81 px, below 100
    # an L shape: 20x20 square minus a 10x10 corner -> fill 300/400
    img[100:120, 100:120] = species_color(1)
    img[100:110, 110:120] = 0
    dets = ProceduralDetector().detect(img)
    assert len(dets) == 1
    assert dets[0].bbox == BBox(100, 100, 120, 120) and dets[0].confidence == 0.75


def test_diagonal_touch_is_two_components():
    img = canvas(60, 60)
    img[0:20, 0:20] = species_color(0)
    img[20:40, 20:40] = species_color(0)
    assert len(ProceduralDetector().detect(img)) == 2


@given(st.integers(0, 50_000))
@settings(max_examples=15, deadline=None)
def test_detector_matches_bfs_oracle(seed):
    rng = np.random.default_rng(seed)
    img = canvas(48, 48)
    for _ in range(int(rng.integers(1, 8))):
        x, y = rng.integers(0, 40, size=2)
        w, h = rng.integers(2, 20, size=2)
        img[y : y + h, x : x + w] = species_color(int(rng.integers(0, 5)))
    det = ProceduralDetector(min_area=10)
    got = sorted((round(d.confidence * d.bbox.area), d.bbox.as_tuple()) for d in det.detect(img))
    want = sorted((n, tuple(float(v) for v in b)) for n, b in bfs_components(fruit_mask(img)) if n >= 10)
    assert got == want
    for d in det.detect(img):
        assert 0 <= d.bbox.x_min and d.bbox.x_max <= 48 and 0 < d.confidence <= 1


# ---- procedural classifier


@pytest.mark.parametrize("k", range(5))
def test_band_hue_maps_to_species(k):
    img = np.zeros((32, 32, 3), np.uint8)
    img[:] = hsv_color(SPECIES_BANDS[k].center)
    dist = ProceduralClassifier().classify(img)
    assert dist.argmax == k and dist.probs[k] >= 0.9
    hue, _, _ = rgb_to_hsv(img)
    assert SPECIES_BANDS[k].lo <= hue.mean() < SPECIES_BANDS[k].hi


def test_noise_and_empty_crops_give_valid_distributions():
    rng = np.random.default_rng(0)
    noise = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
    assert sum(ProceduralClassifier().classify(noise).probs) == pytest.approx(1.0, abs=1e-6)
    uniform = ProceduralClassifier().classify(canvas(10, 10))
    assert uniform.probs == pytest.approx((0.2,) * 5)


def test_procedural_backends_are_pure():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    assert ProceduralDetector().detect(img) == ProceduralDetector().detect(img.copy())
    assert ProceduralClassifier().classify(img) == ProceduralClassifier().classify(img.copy())
    assert ProceduralSegmenter().segment(img) == ProceduralSegmenter().segment(img.copy())


# ---- procedural segmenter


def test_clean_crop_has_empty_mask():
    img = np.zeros((50, 50, 3), np.uint8)
    img[:] = species_color("Navel")
    assert not ProceduralSegmenter().segment(img).data.any()


@pytest.mark.parametrize("cid", range(1, 6))
def test_patch_pixel_count(cid):
    img = np.zeros((50, 50, 3), np.uint8)
    img[:] = species_color("Navel")
    img[20:30, 5:15] = disease_color(cid)
    mask = ProceduralSegmenter().segment(img)
    assert (mask.width, mask.height) == (50, 50)
    assert int((mask.data == cid).sum()) == 100 and int((mask.data > 0).sum()) == 100


# ---- remote backends


def test_remote_detector_round_trip(stub):
    s = stub("detect", {"detections": [
        {"bbox_xyxy": [10, 20, 50, 60], "confidence": 0.9, "class_id": 0},
        {"bbox_xyxy": [80, 90, 70, 75], "confidence": 0.4, "class_id": 0},
    ]})
    det = RemoteDetector(s.url)
    det.ping()
    assert det.descriptor.version == "stub-1" and det.descriptor.model_size_bytes == 1234
    img = canvas(100, 100)
    img[5, 5] = (1, 2, 3)
    out = det.detect(img, "im-1")
    assert [d.bbox.as_tuple() for d in out] == [(10, 20, 50, 60), (70, 75, 80, 90)]
    assert [d.confidence for d in out] == [0.9, 0.4]
    sent = s.requests[-1]
    assert sent["task"] == "detect" and sent["image_id"] == "im-1"
    assert (decode_image(b64decode(sent["image_b64"])) == img).all()


def test_remote_detector_rejects_out_of_bounds_box(stub):
    s = stub("detect", {"detections": [{"bbox_xyxy": [0, 0, 500, 10], "confidence": 0.9, "class_id": 0}]})
    with pytest.raises(MalformedResponse):
        RemoteDetector(s.url).detect(canvas(100, 100))


def test_remote_classifier_surfaces_payload(stub):
    probs = [0.7, 0.1, 0.1, 0.05, 0.05]
    s = stub("classify", {"labels": list(SPECIES.names), "probs": probs})
    dist = RemoteClassifier(s.url).classify(canvas(8, 8))
    assert dist.probs == tuple(probs) and dist.labels == SPECIES


def test_remote_segmenter(stub):
    mask = np.zeros((6, 4), np.uint8)
    mask[1:3, 1:3] = 2

    def reply(doc):
        img = decode_image(b64decode(doc["image_b64"]))
        h, w = img.shape[:2]
        if (h, w) == mask.shape:
            return {"width": w, "height": h, "mask_b64": b64encode_png(mask)}
        return {"width": w, "height": h, "mask_b64": b64encode_png(np.zeros((h + 1, w), np.uint8))}

    s = stub("segment", reply)
    seg = RemoteSegmenter(s.url)
    assert np.array_equal(seg.segment(canvas(4, 6)).data, mask)
    with pytest.raises(MalformedResponse):
        seg.segment(canvas(5, 5))


def test_remote_fault_mapping(stub):
    s = stub("classify", {"labels": ["a", "b"], "probs": [0.5, 0.5]})
    client = RemoteClassifier(s.url, timeout_s=0.3)
    s.status = 500
    with pytest.raises(MalformedResponse):
        client.classify(canvas(4, 4))
    s.status = 200
    s.raw_body = "not json"
    with pytest.raises(MalformedResponse):
        client.classify(canvas(4, 4))
    s.raw_body = None
    s.infer = {"labels": ["a", "b"], "probs": [0.9, 0.9]}
    with pytest.raises(MalformedResponse):
        client.classify(canvas(4, 4))
    s.delay_s = 1.0
    with pytest.raises(InferenceTimeout):
        client.classify(canvas(4, 4))
    s.delay_s = 0.0
    url = s.url
    s.close()
    with pytest.raises(BackendUnavailable):
        RemoteClassifier(url).classify(canvas(4, 4))


def test_malformed_response_logs_excerpt(stub, caplog):
    s = stub("detect", {"detections": "nope"})
    with caplog.at_level("WARNING"), pytest.raises(MalformedResponse):
        RemoteDetector(s.url).detect(canvas(10, 10))
    assert "nope" in caplog.text


# ---- registry


def test_registry_procedural_default():
    b = resolve_backends({})
    assert [d.id for d in b.descriptors] == ["procedural-detect", "procedural-classify", "procedural-segment"]
    assert all(r["ok"] for r in b.ping_all())


def test_registry_unknown_id():
    with pytest.raises(UnknownBackendId):
        resolve_backends({"detector": "yolo-magic"})


def test_registry_remote_and_unreachable(stub):
    s = stub("detect", {"detections": []})
    b = resolve_backends({"detector": "remote", "detector_url": s.url})
    assert b.detector.descriptor.version == "stub-1"
    url = s.url
    s.close()
    assert not b.ping_all()[0]["ok"]
    with pytest.raises(BackendUnavailable):
        resolve_backends({"detector": "remote", "detector_url": url})


def test_registry_task_mismatch_is_unavailable(stub):
    s = stub("classify", {})
    with pytest.raises(BackendUnavailable):
        resolve_backends({"detector": "remote", "detector_url": s.url})


def test_register_custom_backend():
    register_backend("always-procedural", lambda role, cfg: resolve_backends({}).__getattribute__(role))
    b = resolve_backends({"classifier": "always-procedural"})
    assert b.classifier.descriptor.id == "procedural-classify"
