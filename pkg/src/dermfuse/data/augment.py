"""Crop -> flips -> colour jitter -> random grayscale, always clamped to [0, 1]."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from ..rng import SeededRng

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    crop_size: int
    p_vflip: float = 0.5
    p_hflip: float = 0.5
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.8, 1.2)
    p_gray: float = 0.1

    def __post_init__(self):
        for name in ("p_vflip", "p_hflip", "p_gray"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("brightness", "contrast", "saturation"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ConfigError(f"{name} range must satisfy 0 <= lo <= hi, got {(lo, hi)}")
        if self.crop_size < 1:
            raise ConfigError("crop_size must be positive")

    @classmethod
    def identity(cls, crop_size: int) -> "AugmentPolicy":
        return cls(crop_size, 0.0, 0.0, (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), 0.0)


def grayscale(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def _blend(img: np.ndarray, other, factor: float) -> np.ndarray:
    # factor == 1 must give img back bit-exactly: img*1 + other*0
    return np.clip(img * factor + other * (1.0 - factor), 0.0, 1.0)


def crop(img: np.ndarray, size: int, top: int | None = None, left: int | None = None) -> np.ndarray:
    h, w = img.shape[:2]
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than image {h}x{w}")
    top = (h - size) // 2 if top is None else top
    left = (w - size) // 2 if left is None else left
    return img[top:top + size, left:left + size]


def augment(img: np.ndarray, policy: AugmentPolicy, rng: SeededRng, train: bool = True) -> np.ndarray:
    """Apply the augmentation chain to an (H, W, 3) image.

    Every random draw is made unconditionally and in a fixed order so the rng
    stream, and therefore the output, depends only on the seed.  With
    ``train=False`` only the center crop is applied.
    """
    h, w = img.shape[:2]
    size = policy.crop_size
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than image {h}x{w}")
    if not train:
        return crop(img, size).copy()
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    u_v, u_h = rng.random(), rng.random()
    f_b = rng.uniform(*policy.brightness)
    f_c = rng.uniform(*policy.contrast)
    f_s = rng.uniform(*policy.saturation)
    u_g = rng.random()

    out = crop(img, size, top, left)
    if u_v < policy.p_vflip:
        out = out[::-1]
    if u_h < policy.p_hflip:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out, dtype=np.float64)
    out = _blend(out, 0.0, f_b)
    out = _blend(out, grayscale(out).mean(), f_c)
    out = _blend(out, grayscale(out)[..., None], f_s)
    if u_g < policy.p_gray:
        out = np.repeat(grayscale(out)[..., None], 3, axis=2)
    return np.clip(out, 0.0, 1.0)
