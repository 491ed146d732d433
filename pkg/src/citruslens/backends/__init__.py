"""Model backends: the inference contract and its implementations."""
from .base import TASKS, BackendDescriptor, ClassDistribution, Classifier, Detector, MaskMap, Segmenter
from .procedural import ProceduralClassifier, ProceduralDetector, ProceduralSegmenter
from .registry import ResolvedBackends, register_backend, resolve_backends
from .remote import RemoteClassifier, RemoteClient, RemoteDetector, RemoteSegmenter

__all__ = [
    "TASKS",
    "BackendDescriptor",
    "ClassDistribution",
    "Classifier",
    "Detector",
    "MaskMap",
    "ProceduralClassifier",
    "ProceduralDetector",
    "ProceduralSegmenter",
    "RemoteClassifier",
    "RemoteClient",
    "RemoteDetector",
    "RemoteSegmenter",
    "ResolvedBackends",
    "Segmenter",
    "register_backend",
    "resolve_backends",
]
