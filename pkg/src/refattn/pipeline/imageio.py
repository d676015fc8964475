"""PNG boundary: 8-bit RGB on disk, float64 [3,H,W] in [0,1] in memory."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..encoder import ImagePlane


def read_png(path) -> ImagePlane:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return ImagePlane(arr.transpose(2, 0, 1))


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image) -> None:
    pixels = image.pixels if isinstance(image, ImagePlane) else np.asarray(image)
    Image.fromarray(to_uint8(pixels).transpose(1, 2, 0)).save(path)


def write_heatmap(path, values: np.ndarray) -> dict:
    """Min-max scaled grayscale PNG; the scaling goes to ``<path>.json``."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    scaled = (values - lo) / span if span > 0 else np.zeros_like(values)
    Image.fromarray(to_uint8(scaled)).save(path)
    meta = {"min": lo, "max": hi, "shape": list(values.shape)}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return meta
