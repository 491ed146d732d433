"""Exception hierarchy.

Every error carries a stable ``code`` (the class name) so the CLI and the
HTTP service can report failures in a machine-parseable way.
"""
from __future__ import annotations


class CitrusLensError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# geometry
class ZeroAreaCrop(CitrusLensError, ValueError):
    pass


class InvalidNormalizedCoord(CitrusLensError, ValueError):
    pass


# dataset
class MalformedAnnotation(CitrusLensError, ValueError):
    pass


class UnknownImageRef(CitrusLensError, ValueError):
    pass


class ClassOutOfRange(CitrusLensError, ValueError):
    pass


class OrphanLabelFile(CitrusLensError, ValueError):
    pass


class EmptyDataset(CitrusLensError, ValueError):
    pass


class InvalidK(CitrusLensError, ValueError):
    pass


# metrics
class LengthMismatch(CitrusLensError, ValueError):
    pass


class UnknownLabel(CitrusLensError, ValueError):
    pass


class DegenerateClass(CitrusLensError, ValueError):
    pass


class NoGroundTruth(CitrusLensError, ValueError):
    pass


class EmptyGrid(CitrusLensError, ValueError):
    pass


class ShapeMismatch(CitrusLensError, ValueError):
    pass


class EmptyList(CitrusLensError, ValueError):
    pass


# backends
class BackendError(CitrusLensError):
    """Raised by a backend when a single inference call fails."""


class BackendUnavailable(BackendError):
    pass


class InferenceTimeout(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class UnknownBackendId(CitrusLensError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


# service / images
class UndecodableImage(CitrusLensError, ValueError):
    pass
