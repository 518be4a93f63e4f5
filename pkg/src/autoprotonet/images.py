"""Image tensor conventions and lossless PNG codec helpers.

Images are float32 arrays of shape (3, H, W) with values in [0, 1].
PNG (8-bit RGB) is the canonical external form: anything that crosses a
process or session boundary is quantized to the uint8 grid, so decoding
the same PNG always reproduces the same float tensor bit for bit.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def check_image(img: np.ndarray, resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Validate a (3, H, W) float image in [0, 1] and return it as float32."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected image of shape (3, H, W), got {arr.shape}")
    if resolution is not None and arr.shape[1:] != tuple(resolution):
        raise ValueError(
            f"expected resolution {tuple(resolution)}, got {arr.shape[1:]}"
        )
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr.astype(np.float32, copy=False)


def check_batch(images: np.ndarray, resolution: tuple[int, int] | None = None) -> np.ndarray:
    """Validate a (N, 3, H, W) batch; a single (3, H, W) image is promoted."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValueError(f"expected batch of shape (N, 3, H, W), got {arr.shape}")
    if resolution is not None and arr.shape[2:] != tuple(resolution):
        raise ValueError(
            f"expected resolution {tuple(resolution)}, got {arr.shape[2:]}"
        )
    return arr.astype(np.float32, copy=False)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to uint8 with round-half-away rounding."""
    arr = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float32) / 255.0).astype(np.float32)


def snap_to_uint8_grid(img: np.ndarray) -> np.ndarray:
    """Round a float image onto the uint8 grid (the PNG-representable values)."""
    return from_uint8(to_uint8(img))


def encode_png(img: np.ndarray) -> bytes:
    """Encode a (3, H, W) float image (or HxWx3 uint8) as 8-bit RGB PNG bytes."""
    if img.dtype == np.uint8 and img.ndim == 3 and img.shape[2] == 3:
        hwc = img
    else:
        hwc = to_uint8(check_image(img)).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(hwc, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG/JPEG bytes into a float32 (3, H, W) image in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise ValueError(f"undecodable image data: {exc}") from exc
    return from_uint8(rgb.transpose(2, 0, 1))


def encode_png_base64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def decode_png_base64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ValueError(f"invalid base64 image payload: {exc}") from exc
    return decode_png(raw)


def save_png(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def load_png(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def resize_bilinear(img: np.ndarray, resolution: tuple[int, int]) -> np.ndarray:
    """Bilinearly resize a (3, H, W) float image to (h, w)."""
    h, w = resolution
    arr = check_image(img)
    if arr.shape[1:] == (h, w):
        return arr
    hwc = (np.asarray(arr, dtype=np.float32).transpose(1, 2, 0) * 255.0).astype(np.float32)
    pil = Image.fromarray(np.clip(hwc, 0, 255).astype(np.uint8), mode="RGB")
    out = np.asarray(pil.resize((w, h), Image.BILINEAR), dtype=np.float32) / 255.0
    return out.transpose(2, 0, 1).astype(np.float32)
