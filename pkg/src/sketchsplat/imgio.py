"""Image boundary: PNG decode/encode, resampling, sketch binarization.

Internal conventions:
  * rgb rasters are float32 (H, W, 3) in [0, 1]
  * sketch rasters are float32 (H, W) in {0, 1} with 1 = stroke
  * sketch PNG files are dark strokes on a white background
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import InputError

INPUT_SIZE = 256  # pipeline-facing resolution for sketches and references
SKETCH_THRESHOLD = 0.5


def encode_png(arr: np.ndarray) -> bytes:
    """uint8 (H, W) or (H, W, 3) array -> PNG bytes (deterministic settings)."""
    img = Image.fromarray(arr)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """PNG/encoded image bytes -> float32 rgb (H, W, 3) in [0, 1]."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"undecodable image: {exc}") from exc
    img = img.convert("RGB")
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


def load_rgb(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return decode_png(data)


def save_rgb(path, rgb: np.ndarray) -> None:
    arr = np.clip(np.asarray(rgb, dtype=np.float32) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(encode_png(arr))


def resample_rgb(rgb: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Bilinear resample to size x size (no-op when already there)."""
    if rgb.shape[0] == size and rgb.shape[1] == size:
        return np.asarray(rgb, dtype=np.float32)
    arr = np.clip(np.asarray(rgb, dtype=np.float32) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    img = Image.fromarray(arr).resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


def luminance(rgb: np.ndarray) -> np.ndarray:
    w = np.array([0.299, 0.587, 0.114], dtype=np.float32)
    return np.asarray(rgb, dtype=np.float32) @ w


def binarize_sketch(rgb: np.ndarray, size: int = INPUT_SIZE) -> np.ndarray:
    """Dark-on-white drawing -> {0,1} stroke raster at the pipeline resolution."""
    rgb = resample_rgb(rgb, size)
    return (luminance(rgb) < SKETCH_THRESHOLD).astype(np.float32)


def sketch_to_rgb(sketch: np.ndarray) -> np.ndarray:
    """{0,1} stroke raster -> dark-on-white rgb for files and the encoder."""
    inv = np.float32(1.0) - np.asarray(sketch, dtype=np.float32)
    return np.repeat(inv[:, :, None], 3, axis=2)


def load_sketch(path, size: int = INPUT_SIZE) -> np.ndarray:
    return binarize_sketch(load_rgb(path), size)


def save_sketch(path, sketch: np.ndarray) -> None:
    save_rgb(path, sketch_to_rgb(sketch))


def load_reference(path, size: int = INPUT_SIZE) -> np.ndarray:
    return resample_rgb(load_rgb(path), size)
