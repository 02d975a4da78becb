"""Samples (image + encoded metadata) and minority-class oversampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ClassMissingError, ConfigError
from ..rng import SeededRng

ORIGINAL = "original"


@dataclass(frozen=True, eq=False)
class Sample:
    image_name: str
    patient_id: str
    image: np.ndarray | None
    features: np.ndarray
    target: int
    provenance: str = ORIGINAL
    aug_seed: int | None = None

    @property
    def is_copy(self) -> bool:
        return self.provenance != ORIGINAL

    @property
    def copy_index(self) -> int:
        return 0 if not self.is_copy else int(self.provenance.rsplit(" ", 1)[1])


def oversample(samples: list, target_ratio: float, rng: SeededRng) -> list:
    """Duplicate minority samples round-robin until minority/majority >= target_ratio.

    Originals are returned untouched and first; each copy keeps the source's
    patient_id and records its copy number and its own augmentation seed.
    """
    if not 0.0 < target_ratio <= 1.0:
        raise ConfigError(f"target_ratio must be in (0, 1], got {target_ratio}")
    pos = [s for s in samples if s.target == 1]
    neg = [s for s in samples if s.target == 0]
    if not pos or not neg:
        raise ClassMissingError(f"oversampling needs both classes ({len(pos)} malignant, {len(neg)} benign)")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    needed = math.ceil(target_ratio * len(majority) - 1e-9) - len(minority)
    out = list(samples)
    for j in range(max(0, needed)):
        src = minority[j % len(minority)]
        seed = int(rng.integers(0, 2**63 - 1))
        out.append(replace(src, provenance=f"oversampled-copy {j // len(minority) + 1}", aug_seed=seed))
    return out
