"""HTTP front end: ``POST /analyze``, ``GET /health``, ``GET /stats``.

Analyses run in worker threads, at most ``max_in_flight`` at a time. Further
requests wait in FIFO order; once ``queue_bound`` requests are waiting, new
ones are refused with 429. Crop files of each request go to their own
``{crops_dir}/{image_id}-{nonce}`` directory so concurrent requests never
collide.

Crop paths in reports are local filesystem paths on the server host; there
is no endpoint for fetching crops.
"""
from __future__ import annotations

import asyncio
import json
import math
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

from anyio import to_thread
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .backends.registry import ResolvedBackends, resolve_backends
from .errors import BackendUnavailable, UndecodableImage
from .imaging import b64decode, decode_image, encode_png
from .pipeline import PipelineConfig, analyze, report_to_json, safe_stem

DEFAULT_MAX_BODY = 20 * 1024 * 1024
LATENCY_WINDOW = 1024
THROUGHPUT_WINDOW_S = 60.0


def _nearest_rank(sorted_vals: list[float], q: float) -> float:
    k = max(1, math.ceil(round(q * len(sorted_vals), 9)))
    return sorted_vals[min(k, len(sorted_vals)) - 1]


class ServiceStats:
    """Request counters and latency quantiles over the last 1024 requests. Thread-safe."""

    def __init__(self, window: int = LATENCY_WINDOW, clock=time.monotonic):
        self._lock = threading.Lock()
        self._clock = clock
        self._started = clock()
        self._latencies: deque[float] = deque(maxlen=window)
        self._finished: deque[float] = deque()
        self.request_count = 0
        self.error_count = 0

    def record(self, latency_ms: float, ok: bool) -> None:
        now = self._clock()
        with self._lock:
            self.request_count += 1
            if not ok:
                self.error_count += 1
            self._latencies.append(float(latency_ms))
            self._finished.append(now)
            self._trim(now)

    def _trim(self, now: float) -> None:
        while self._finished and now - self._finished[0] > THROUGHPUT_WINDOW_S:
            self._finished.popleft()

    def snapshot(self) -> dict:
        now = self._clock()
        with self._lock:
            self._trim(now)
            lat = sorted(self._latencies)
            uptime = now - self._started
            span = min(THROUGHPUT_WINDOW_S, uptime) or 1e-9
            doc = {
                "request_count": self.request_count,
                "error_count": self.error_count,
                "latency_ms": {
                    "p50": _nearest_rank(lat, 0.50) if lat else None,
                    "p90": _nearest_rank(lat, 0.90) if lat else None,
                    "p99": _nearest_rank(lat, 0.99) if lat else None,
                    "window": len(lat),
                },
                "throughput_rps": len(self._finished) / span,
                "uptime_s": uptime,
            }
        return doc


class Admission:
    """FIFO admission: ``limit`` concurrent holders, at most ``queue_bound`` waiters."""

    def __init__(self, limit: int = 4, queue_bound: int = 16):
        self._sem = asyncio.Semaphore(limit)
        self.limit = limit
        self.queue_bound = queue_bound
        self.active = 0
        self.waiting = 0

    def try_enter(self) -> bool:
        return self.active < self.limit or self.waiting < self.queue_bound

    async def __aenter__(self):
        self.waiting += 1
        try:
            await self._sem.acquire()
        finally:
            self.waiting -= 1
        self.active += 1
        return self

    async def __aexit__(self, *exc):
        self.active -= 1
        self._sem.release()


@dataclass(frozen=True)
class ServiceConfig:
    pipeline: PipelineConfig = PipelineConfig()
    backend_config: Mapping[str, Any] | None = None
    max_in_flight: int = 4
    queue_bound: int = 16
    max_body_bytes: int = DEFAULT_MAX_BODY

    @classmethod
    def from_mapping(cls, config: Mapping[str, Any]) -> "ServiceConfig":
        return cls(
            pipeline=PipelineConfig.from_mapping(config),
            backend_config=dict(config),
            max_in_flight=int(config.get("service_max_in_flight", 4)),
            queue_bound=int(config.get("service_queue_bound", 16)),
            max_body_bytes=int(config.get("max_body_bytes", DEFAULT_MAX_BODY)),
        )


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": code, "message": message}, status_code=status)


async def _read_image(request: Request, max_bytes: int) -> tuple[bytes, str | None]:
    """Pull image bytes and an optional image id out of a JSON, multipart or raw body."""
    ctype = request.headers.get("content-type", "").lower()
    if ctype.startswith("multipart/form-data"):
        form = await request.form()
        image_id = form.get("image_id")
        for value in form.values():
            if hasattr(value, "read"):
                return await value.read(), str(image_id) if image_id else None
        raise UndecodableImage("multipart body has no file part")
    body = await request.body()
    if len(body) > max_bytes:
        raise _TooLarge()
    if not body:
        raise UndecodableImage("empty request body")
    if ctype.startswith("application/json"):
        try:
            doc = json.loads(body)
        except ValueError:
            raise UndecodableImage("body is not valid JSON") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("image_b64"), str):
            raise UndecodableImage("JSON body needs an 'image_b64' string")
        image_id = doc.get("image_id")
        return b64decode(doc["image_b64"]), str(image_id) if image_id else None
    return body, request.query_params.get("image_id")


class _TooLarge(Exception):
    pass


def create_app(config: ServiceConfig | None = None, backends: ResolvedBackends | None = None) -> FastAPI:
    """Build the ASGI app. Backends are resolved now unless given."""
    config = config or ServiceConfig()
    if backends is None:
        backends = resolve_backends(config.backend_config)
    app = FastAPI(title="citruslens", version="1")
    stats = ServiceStats()
    admission = Admission(config.max_in_flight, config.queue_bound)
    app.state.stats = stats
    app.state.backends = backends
    app.state.admission = admission

    @app.post("/analyze")
    async def analyze_endpoint(request: Request, overlay: int = 0):
        t0 = time.perf_counter()

        def done(resp: Response) -> Response:
            stats.record((time.perf_counter() - t0) * 1000.0, resp.status_code == 200)
            return resp

        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > config.max_body_bytes:
            return done(_error(413, "PayloadTooLarge", f"body exceeds {config.max_body_bytes} bytes"))
        if not admission.try_enter():
            return done(_error(429, "TooManyRequests", "analysis queue is full"))
        try:
            data, image_id = await _read_image(request, config.max_body_bytes)
            if len(data) > config.max_body_bytes:
                raise _TooLarge()
            image = decode_image(data)
        except _TooLarge:
            return done(_error(413, "PayloadTooLarge", f"body exceeds {config.max_body_bytes} bytes"))
        except UndecodableImage as exc:
            return done(_error(400, "UndecodableImage", str(exc)))

        image_id = image_id or "upload"
        nonce = uuid.uuid4().hex[:12]
        req_dir = Path(config.pipeline.crops_dir) / f"{safe_stem(image_id)}-{nonce}"
        pcfg = replace(config.pipeline, crops_dir=str(req_dir), emit_overlay=bool(overlay))
        async with admission:
            try:
                report, overlay_img = await to_thread.run_sync(analyze, image, image_id, pcfg, backends)
            except BackendUnavailable as exc:
                return done(_error(503, "BackendUnavailable", str(exc)))
        if overlay:
            sidecar = req_dir / "report.json"
            sidecar.write_text(report_to_json(report))
            return done(
                Response(
                    encode_png(overlay_img),
                    media_type="image/png",
                    headers={"X-Report-Path": str(sidecar), "X-Report-Count": str(report.count)},
                )
            )
        return done(Response(report_to_json(report), media_type="application/json"))

    @app.get("/health")
    async def health():
        results = await to_thread.run_sync(backends.ping_all)
        failed = [r["id"] for r in results if not r["ok"]]
        if failed:
            return JSONResponse({"status": "unavailable", "backends": results, "failed": failed}, status_code=503)
        return {"status": "ok", "backends": results}

    @app.get("/stats")
    async def stats_endpoint():
        return stats.snapshot()

    return app
