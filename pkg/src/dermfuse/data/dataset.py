"""In-memory dataset of samples plus batch assembly with per-sample augmentation seeds."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ShapeError
from ..rng import SeededRng, derive_seed
from .augment import AugmentPolicy, augment
from .hair import remove_hair
from .imageio import find_image, read_image
from .metadata import FeatureSchema, MetadataRecord, encode_features
from .sampling import Sample


class Dataset:
    """Samples sharing one feature schema and one augmentation policy."""

    def __init__(self, samples: Sequence[Sample], schema: FeatureSchema, policy: AugmentPolicy):
        self.samples = list(samples)
        self.schema = schema
        self.policy = policy
        for s in self.samples:
            if s.features.shape != (schema.width,):
                raise ShapeError(f"{s.image_name}: features width {s.features.shape} != schema {schema.width}")

    @classmethod
    def from_records(cls, records: Sequence[MetadataRecord], images: dict, policy: AugmentPolicy | None = None,
                     schema: FeatureSchema | None = None, hair_removal: bool = False) -> "Dataset":
        schema = schema or FeatureSchema.from_records(records)
        samples = []
        for r in records:
            img = images[r.image_name]
            if hair_removal:
                img = remove_hair(img)
            samples.append(Sample(r.image_name, r.patient_id, img, encode_features(r, schema), r.target))
        if policy is None:
            policy = AugmentPolicy(samples[0].image.shape[0] if samples else 1)
        return cls(samples, schema, policy)

    @classmethod
    def from_directory(cls, records: Sequence[MetadataRecord], image_dir, **kw) -> "Dataset":
        images = {r.image_name: read_image(find_image(Path(image_dir), r.image_name)) for r in records}
        return cls.from_records(records, images, **kw)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[int(i)] for i in indices], self.schema, self.policy)

    def with_samples(self, samples: Sequence[Sample]) -> "Dataset":
        return Dataset(samples, self.schema, self.policy)

    @property
    def targets(self) -> np.ndarray:
        return np.array([s.target for s in self.samples], dtype=np.int64)

    @property
    def names(self) -> list[str]:
        return [s.image_name for s in self.samples]

    def sample_seed(self, sample: Sample, seed: int, epoch: int) -> int:
        return derive_seed(seed, epoch, sample.image_name, sample.aug_seed or 0)

    def batch(self, indices, train: bool, seed: int = 0, epoch: int = 0):
        """(images NCHW, features NxF, targets N) for the given sample indices.

        Training batches are augmented with a seed derived from (seed, epoch,
        image_name, copy seed), so assembly order does not affect the pixels.
        """
        imgs, feats, ys = [], [], []
        for i in indices:
            s = self.samples[int(i)]
            rng = SeededRng(self.sample_seed(s, seed, epoch)) if train else None
            imgs.append(augment(s.image, self.policy, rng, train=train).transpose(2, 0, 1))
            feats.append(s.features)
            ys.append(s.target)
        return np.stack(imgs), np.stack(feats), np.array(ys, dtype=np.int64)
