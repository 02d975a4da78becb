"""Deterministic synthetic dermoscopy-like dataset for desk-scale runs.

Generative rules (what a model can learn from):

* Background: skin tone (0.87, 0.70, 0.60) with a per-image tone shift and
  mild pixel noise.
* Lesion: a soft-edged ellipse near the centre, brown pigment.  Pigment
  darkness is drawn from N(0.38, 0.08) for benign and N(0.66, 0.08) for
  malignant lesions (clipped to [0.15, 0.9]).  The border radius is modulated
  by harmonics 3-7 whose amplitudes are U(0, 0.04) for benign and
  U(0.05, 0.14) for malignant lesions; malignant pigment is also blotchier.
* Metadata: age is N(45, 15) for benign and N(63, 11) for malignant, rounded
  to a multiple of 5 in [5, 90]; male sex is slightly more frequent among
  malignant cases; anatomical site is label-independent.  About 2% of sex,
  age and site entries are blank.
* Hair: 30% of images get 1-4 dark 2-pixel strokes, independent of the label.
* Patients hold 1-5 consecutive images of the shuffled sample order.

Images are quantised to 8 bits so a PNG round trip is exact.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..rng import SeededRng
from .imageio import quantize
from .metadata import DEFAULT_SITES, MetadataRecord

SKIN = np.array([0.87, 0.70, 0.60])
PIGMENT = np.array([0.36, 0.20, 0.12])
SITE_P = np.array([0.5, 0.2, 0.15, 0.1, 0.03, 0.02])


def _draw_stroke(img: np.ndarray, rng: SeededRng, width: float = 1.0) -> None:
    """Darken every pixel within ``width`` of a gently bent random line."""
    h, w = img.shape[:2]
    p0 = rng.uniform(0, [h, w])
    ang = rng.uniform(0, np.pi)
    length = rng.uniform(0.4, 0.9) * h
    bend = rng.uniform(-0.3, 0.3)
    t = np.linspace(-0.5, 0.5, 4 * h)
    py = p0[0] + t * length * np.sin(ang) + bend * length * (t ** 2 - 0.25)
    px = p0[1] + t * length * np.cos(ang)
    off = np.arange(-2, 3)
    cy = np.round(py)[:, None, None] + off[None, :, None]
    cx = np.round(px)[:, None, None] + off[None, None, :]
    near = np.hypot(cy - py[:, None, None], cx - px[:, None, None]) <= width
    cy, cx = np.broadcast_arrays(cy, cx)
    keep = near & (cy >= 0) & (cy < h) & (cx >= 0) & (cx < w)
    mask = np.zeros((h, w), dtype=bool)
    mask[cy[keep].astype(int), cx[keep].astype(int)] = True
    img[mask] = img[mask] * 0.25


def lesion_image(extent: int, malignant: bool, rng: SeededRng, hair: bool = True) -> np.ndarray:
    h = w = extent
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    tone = SKIN + rng.uniform(-0.04, 0.04, 3)
    img = np.broadcast_to(tone, (h, w, 3)).copy()
    img += rng.normal(0.0, 0.015, (h, w, 3))

    cy, cx = (h - 1) / 2 + rng.normal(0, 0.04 * h), (w - 1) / 2 + rng.normal(0, 0.04 * w)
    a = rng.uniform(0.17, 0.22) * h
    b = a * rng.uniform(0.8, 1.0)
    rot = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(rot) + dy * np.sin(rot)) / a
    v = (-dx * np.sin(rot) + dy * np.cos(rot)) / b
    r = np.hypot(u, v)
    theta = np.arctan2(v, u)
    amp_lo, amp_hi = (0.05, 0.14) if malignant else (0.0, 0.04)
    border = np.ones_like(theta)
    for k in range(3, 8):
        border += rng.uniform(amp_lo, amp_hi) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    inside = np.clip((border - r) / 0.08 + 0.5, 0.0, 1.0)  # soft edge

    darkness = float(np.clip(rng.normal(0.66 if malignant else 0.38, 0.08), 0.15, 0.9))
    blotch_amp = 0.18 if malignant else 0.06
    blotch = np.zeros((h, w))
    for _ in range(3):
        by, bx = rng.uniform(-1, 1, 2)
        blotch += np.exp(-((u - bx) ** 2 + (v - by) ** 2) / 0.15) * rng.uniform(-1, 1)
    dark = np.clip(darkness + blotch_amp * blotch, 0.05, 0.95)[..., None]
    lesion = img * (1 - dark) + PIGMENT * dark * 0.5
    img = img * (1 - inside[..., None]) + lesion * inside[..., None]

    n_hair = int(rng.integers(1, 5)) if rng.random() < 0.3 else 0
    if hair:
        for _ in range(n_hair):
            _draw_stroke(img, rng)
    return quantize(img)


def synth_generate(n: int, malignant_fraction: float = 0.1, image_extent: int = 64, seed: int = 0):
    """Return (records, images) where images maps image_name -> (H, W, 3) array."""
    if n < 10:
        raise ConfigError(f"n must be >= 10, got {n}")
    if not 0.0 < malignant_fraction < 1.0:
        raise ConfigError(f"malignant_fraction must be in (0, 1), got {malignant_fraction}")
    n_mal = int(round(n * malignant_fraction))
    if n_mal < 1 or n_mal > n - 1:
        raise ConfigError(f"malignant_fraction {malignant_fraction} gives {n_mal} of {n} malignant")
    if image_extent < 16:
        raise ConfigError("image_extent must be >= 16")
    rng = SeededRng(seed)
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[:n_mal]] = 1

    patient_of = []
    pid = 0
    while len(patient_of) < n:
        patient_of.extend([pid] * int(rng.integers(1, 6)))
        pid += 1
    patient_of = patient_of[:n]

    records, images = [], {}
    for i in range(n):
        mal = bool(labels[i])
        meta = rng.spawn("meta", i)
        age = meta.normal(63.0, 11.0) if mal else meta.normal(45.0, 15.0)
        age = float(np.clip(5 * round(age / 5), 5, 90))
        if meta.random() < 0.02:
            age = None
        u = meta.random()
        sex = "unknown" if u < 0.02 else ("male" if u < (0.62 if mal else 0.50) else "female")
        site = DEFAULT_SITES[int(np.searchsorted(np.cumsum(SITE_P), meta.random(), side="right"))]
        if meta.random() < 0.02:
            site = None
        name = f"SYN_{i:06d}"
        records.append(MetadataRecord(
            image_name=name, patient_id=f"PAT_{patient_of[i]:05d}", sex=sex, age_approx=age,
            anatom_site=site, diagnosis="melanoma" if mal else "nevus",
            benign_malignant="malignant" if mal else "benign", target=int(mal)))
        images[name] = lesion_image(image_extent, mal, rng.spawn("image", i))
    return records, images
