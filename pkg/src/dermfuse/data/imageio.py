"""PNG / binary PPM image files as (H, W, 3) float arrays in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from ..errors import FormatError

EXTENSIONS = (".png", ".ppm")


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so in-memory and on-disk images agree exactly."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() not in EXTENSIONS:
        raise FormatError(f"unsupported image type {path.suffix!r} (PNG or PPM only)")
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(img: np.ndarray, path) -> None:
    path = Path(path)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise FormatError(f"unsupported image type {path.suffix!r} (PNG or PPM only)")
    PILImage.fromarray(data, "RGB").save(path, format=fmt)


def find_image(directory, image_name: str) -> Path:
    for ext in EXTENSIONS:
        p = Path(directory) / f"{image_name}{ext}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no PNG/PPM image for {image_name!r} in {directory}")
