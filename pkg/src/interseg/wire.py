"""Wire encodings for masks and images.

Masks travel as base64-encoded 8-bit grayscale PNGs inside JSON envelopes:
pixel value = class id, scribble sentinel = C.  Images may be 8- or 16-bit
grayscale PNGs; color uploads are converted to grayscale.
"""
from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class WireError(ValueError):
    pass


def png_bytes_from_labels(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise WireError(f"label image must be 2D, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise WireError("label values do not fit 8-bit PNG")
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def labels_from_png_bytes(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise WireError(f"cannot decode PNG: {exc}") from exc
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.int64)


def encode_mask_b64(arr: np.ndarray) -> str:
    return base64.b64encode(png_bytes_from_labels(arr)).decode("ascii")


def decode_mask_b64(text: str) -> np.ndarray:
    try:
        data = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise WireError(f"invalid base64: {exc}") from exc
    return labels_from_png_bytes(data)


def decode_image_b64(text: str) -> np.ndarray:
    """Grayscale intensities as float32, raw (un-normalized) values."""
    try:
        data = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise WireError(f"invalid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise WireError(f"cannot decode image: {exc}") from exc
    if img.mode in ("L", "I", "I;16", "F"):
        arr = np.asarray(img, dtype=np.float32)
    else:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    if arr.ndim != 2 or arr.size == 0:
        raise WireError(f"expected a 2D grayscale image, got shape {arr.shape}")
    return arr


def encode_image_b64(arr: np.ndarray) -> str:
    """Encode float intensities as 8-bit grayscale (fixtures and tests)."""
    arr = np.asarray(arr, dtype=np.float32)
    lo, hi = float(arr.min()), float(arr.max())
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    img8 = np.clip((arr - lo) * scale, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img8, mode="L").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
