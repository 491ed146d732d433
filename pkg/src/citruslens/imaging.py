"""Raster helpers: lossless PNG encoding, base64 transport and HSV conversion."""
from __future__ import annotations

import base64
import binascii
import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import UndecodableImage


def as_rgb(image) -> np.ndarray:
    """Coerce to an ``(H, W, 3)`` uint8 array."""
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W, 3) RGB raster, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    return arr


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    mode = "L" if arr.ndim == 2 else "RGB"
    Image.fromarray(np.ascontiguousarray(arr), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """Decode any Pillow-readable image bytes to RGB."""
    if not data:
        raise UndecodableImage("empty image payload")
    try:
        with Image.open(io.BytesIO(data)) as im:
            return np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UndecodableImage(f"cannot decode image: {exc}") from None


def decode_index_png(data: bytes) -> np.ndarray:
    """Decode a single-channel index raster without palette or gamma conversion."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode not in ("L", "P", "I", "I;16"):
                raise UndecodableImage(f"index raster must be single-channel, got mode {im.mode}")
            return np.asarray(im).astype(np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise UndecodableImage(f"cannot decode index raster: {exc}") from None


def b64encode_png(arr: np.ndarray) -> str:
    return base64.b64encode(encode_png(arr)).decode("ascii")


def b64decode(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError, TypeError) as exc:
        raise UndecodableImage(f"invalid base64 payload: {exc}") from None


def read_image(path: str | Path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_png(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(arr))


def rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    x = np.asarray(rgb)
    if x.dtype != np.uint8:
        x = np.clip(np.rint(x), 0, 255).astype(np.uint8)
    c = x.astype(np.int16)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    # dominant channel, ties resolved r > g > b
    which = np.argmax(c, axis=-1)
    num = np.where(which == 0, g - b, np.where(which == 1, b - r, r - g)).astype(np.float64)
    offset = np.array([0.0, 2.0, 4.0])[which]
    safe = np.where(delta > 0, delta, 1).astype(np.float64)
    hue = np.where(delta > 0, (num / safe + offset) * 60.0, 0.0) % 360.0
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1).astype(np.float64), 0.0)
    return hue, sat, mx / 255.0
