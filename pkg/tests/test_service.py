import base64
import json
import threading
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from citruslens.backends import resolve_backends
from citruslens.imaging import decode_image, encode_png
from citruslens.pipeline import PipelineConfig, validate_report
from citruslens.service import Admission, ServiceConfig, ServiceStats, _nearest_rank, create_app
from citruslens.synthetic import planted_scene


@pytest.fixture(scope="module")
def png():
    return encode_png(planted_scene()[0])


def make_client(tmp_path, **kw):
    cfg = ServiceConfig(pipeline=PipelineConfig(crops_dir=str(tmp_path / "crops")), **kw)
    return TestClient(create_app(cfg, resolve_backends({})))


def test_fresh_stats(tmp_path):
    doc = make_client(tmp_path).get("/stats").json()
    assert doc["request_count"] == 0 and doc["error_count"] == 0
    assert doc["latency_ms"]["p50"] is None and doc["latency_ms"]["p99"] is None


def test_multipart_upload(tmp_path, png):
    client = make_client(tmp_path)
    r = client.post("/analyze", files={"image": ("scene.png", png, "image/png")}, data={"image_id": "scene"})
    assert r.status_code == 200
    doc = r.json()
    validate_report(doc)
    assert doc["count"] == 3 and doc["image_id"] == "scene"
    for f in doc["findings"]:
        assert Path(f["crop_path"]).is_file()


def test_json_upload_and_raw_body(tmp_path, png):
    client = make_client(tmp_path)
    r = client.post("/analyze", json={"image_b64": base64.b64encode(png).decode(), "image_id": "j"})
    assert r.status_code == 200 and r.json()["count"] == 3
    r = client.post("/analyze", content=png, headers={"content-type": "image/png"})
    assert r.status_code == 200 and r.json()["image_id"] == "upload"


def test_bad_inputs(tmp_path):
    client = make_client(tmp_path, max_body_bytes=1000)
    assert client.post("/analyze", content=b"").status_code == 400
    assert client.post("/analyze", content=b"not an image").status_code == 400
    assert client.post("/analyze", json={"image_b64": "!!!"}).status_code == 400
    r = client.post("/analyze", content=b"x" * 2000)
    assert r.status_code == 413 and r.json()["error"] == "PayloadTooLarge"
    stats = client.get("/stats").json()
    assert stats["request_count"] == 4 and stats["error_count"] == 4


def test_overlay_response(tmp_path, png):
    client = make_client(tmp_path)
    r = client.post("/analyze?overlay=1", content=png)
    assert r.status_code == 200 and r.headers["content-type"] == "image/png"
    assert decode_image(r.content).shape == (640, 640, 3)
    sidecar = Path(r.headers["X-Report-Path"])
    validate_report(json.loads(sidecar.read_text()))
    assert r.headers["X-Report-Count"] == "3"


def test_stats_after_sequential_requests(tmp_path, png):
    client = make_client(tmp_path)
    for _ in range(10):
        assert client.post("/analyze", content=png).status_code == 200
    client.get("/health")
    doc = client.get("/stats").json()
    assert doc["request_count"] == 10
    lat = doc["latency_ms"]
    assert lat["p50"] <= lat["p90"] <= lat["p99"] and lat["window"] == 10
    assert doc["throughput_rps"] > 0


def test_concurrent_requests_get_separate_crop_dirs(tmp_path, png):
    client = make_client(tmp_path)
    results = []

    def go():
        results.append(client.post("/analyze", content=png, params={"image_id": "same"}).json())

    threads = [threading.Thread(target=go) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    dirs = {Path(f["crop_path"]).parent for doc in results for f in doc["findings"]}
    assert len(dirs) == 4
    assert client.get("/stats").json()["request_count"] == 4


def test_health_ok_and_unavailable(tmp_path, stub):
    assert make_client(tmp_path).get("/health").status_code == 200
    s = stub("segment", {})
    backends = resolve_backends({"segmenter": "remote", "segmenter_url": s.url})
    client = TestClient(create_app(ServiceConfig(pipeline=PipelineConfig(crops_dir=str(tmp_path))), backends))
    assert client.get("/health").status_code == 200
    s.close()
    r = client.get("/health")
    assert r.status_code == 503 and r.json()["failed"] == ["remote-segment"]


def test_analyze_503_when_remote_down(tmp_path, stub, png):
    s = stub("classify", {"labels": ["a", "b"], "probs": [0.5, 0.5]})
    backends = resolve_backends({"classifier": "remote", "classifier_url": s.url})
    client = TestClient(create_app(ServiceConfig(pipeline=PipelineConfig(crops_dir=str(tmp_path))), backends))
    s.close()
    r = client.post("/analyze", content=png)
    assert r.status_code == 503 and r.json()["error"] == "BackendUnavailable"
    assert client.get("/stats").json()["error_count"] == 1


# ---- units


def test_nearest_rank_quantiles():
    vals = sorted(float(v) for v in range(1, 101))
    assert _nearest_rank(vals, 0.5) == 50 and _nearest_rank(vals, 0.99) == 99 and _nearest_rank(vals, 0.9) == 90
    assert _nearest_rank([7.0], 0.99) == 7.0


def test_stats_ring_and_throughput_window():
    now = [0.0]
    stats = ServiceStats(window=4, clock=lambda: now[0])
    for v in (5, 1, 9, 3, 7):
        stats.record(v, True)
    snap = stats.snapshot()
    assert snap["latency_ms"]["window"] == 4 and snap["latency_ms"]["p50"] == 3
    now[0] = 100.0
    assert stats.snapshot()["throughput_rps"] == 0
    assert stats.snapshot()["request_count"] == 5


def test_admission_bounds():
    adm = Admission(limit=1, queue_bound=1)
    assert adm.try_enter()
    adm.active, adm.waiting = 1, 1
    assert not adm.try_enter()


def test_admission_rejects_with_429(tmp_path, png):
    app = create_app(ServiceConfig(pipeline=PipelineConfig(crops_dir=str(tmp_path)), max_in_flight=1, queue_bound=0), resolve_backends({}))
    app.state.admission.active = 1  # simulate a held slot
    r = TestClient(app).post("/analyze", content=png)
    assert r.status_code == 429


def test_service_config_from_mapping():
    cfg = ServiceConfig.from_mapping({"service_max_in_flight": 2, "confidence_threshold": 0.3})
    assert cfg.max_in_flight == 2 and cfg.pipeline.confidence_threshold == 0.3
    assert np.isclose(cfg.max_body_bytes, 20 * 1024 * 1024)
