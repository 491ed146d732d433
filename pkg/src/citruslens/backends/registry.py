"""Resolve a (detector, classifier, segmenter) triple from a flat config.

Config keys::

    detector = "procedural" | "remote"   (likewise classifier, segmenter)
    detector_url = "http://host:port"     (remote only)
    timeout_s = 10                        (or detector_timeout_s, ...)
    min_area = 100                        (procedural detector)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

from ..errors import BackendUnavailable, MalformedResponse, UnknownBackendId
from .base import BackendDescriptor, Classifier, Detector, Segmenter
from .procedural import ProceduralClassifier, ProceduralDetector, ProceduralSegmenter
from .remote import DEFAULT_TIMEOUT_S, RemoteClassifier, RemoteDetector, RemoteSegmenter

ROLES = {"detector": "detect", "classifier": "classify", "segmenter": "segment"}

Factory = Callable[[str, Mapping[str, Any]], Any]


def _timeout(role: str, config: Mapping[str, Any]) -> float:
    return float(config.get(f"{role}_timeout_s", config.get("timeout_s", DEFAULT_TIMEOUT_S)))


def _procedural(role: str, config: Mapping[str, Any]):
    if role == "detector":
        return ProceduralDetector(min_area=int(config.get("min_area", 100)))
    if role == "classifier":
        return ProceduralClassifier()
    return ProceduralSegmenter()


def _remote(role: str, config: Mapping[str, Any]):
    url = config.get(f"{role}_url")
    if not url:
        raise ValueError(f"remote {role} needs a '{role}_url' entry")
    cls = {"detector": RemoteDetector, "classifier": RemoteClassifier, "segmenter": RemoteSegmenter}[role]
    return cls(str(url), _timeout(role, config), backend_id=f"remote-{ROLES[role]}")


_REGISTRY: dict[str, Factory] = {"procedural": _procedural, "remote": _remote}


def register_backend(backend_id: str, factory: Factory) -> None:
    """Make ``backend_id`` selectable in configs. ``factory(role, config)`` builds it."""
    _REGISTRY[backend_id] = factory


@dataclass
class ResolvedBackends:
    detector: Detector
    classifier: Classifier
    segmenter: Segmenter

    @property
    def descriptors(self) -> list[BackendDescriptor]:
        return [self.detector.descriptor, self.classifier.descriptor, self.segmenter.descriptor]

    def __iter__(self):
        return iter((self.detector, self.classifier, self.segmenter))

    def ping_all(self) -> list[dict]:
        """Ping every backend; one result dict per backend, never raises."""
        results = []
        for backend in self:
            d = backend.descriptor
            try:
                backend.ping()
                results.append({"id": d.id, "task": d.task, "ok": True, "version": backend.descriptor.version})
            except Exception as exc:  # health checks report, never raise
                results.append({"id": d.id, "task": d.task, "ok": False, "error": f"{type(exc).__name__}: {exc}"})
        return results


def resolve_backends(config: Mapping[str, Any] | None = None) -> ResolvedBackends:
    """Build and health-check one backend per task.

    Missing roles default to ``procedural``. Remote backends are pinged once
    here, so an unreachable endpoint fails at resolution time.

    Raises:
        UnknownBackendId: a role names an unregistered backend.
        BackendUnavailable: a backend failed its ping.
    """
    config = dict(config or {})
    built = {}
    for role in ROLES:
        backend_id = str(config.get(role, "procedural"))
        factory = _REGISTRY.get(backend_id)
        if factory is None:
            raise UnknownBackendId(f"unknown backend id {backend_id!r} for {role}; known: {sorted(_REGISTRY)}")
        backend = factory(role, config)
        try:
            backend.ping()
        except MalformedResponse as exc:
            raise BackendUnavailable(f"{role} failed its health check: {exc}") from exc
        built[role] = backend
    return ResolvedBackends(built["detector"], built["classifier"], built["segmenter"])
