"""Patient-grouped K-fold assignment."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import ConfigError, InsufficientGroupsError


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.fold_of)

    def fold_sizes(self) -> list[int]:
        counts = Counter(self.fold_of)
        return [counts.get(f, 0) for f in range(self.k)]


def group_kfold(group_ids: Sequence[Hashable], k: int = 5) -> FoldAssignment:
    """Assign whole groups to folds, largest group first, into the emptiest fold.

    Groups are ordered by (size descending, identifier ascending); ties between
    equally full folds go to the lowest fold index.  Every member of a group
    lands in the same fold.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    sizes = Counter(group_ids)
    if len(sizes) < k:
        raise InsufficientGroupsError(
            f"the number of distinct groups ({len(sizes)}) has to be at least equal to the number of folds ({k})")
    order = sorted(sizes, key=lambda g: (-sizes[g], str(g)))
    load = [0] * k
    fold_of_group = {}
    for g in order:
        target = min(range(k), key=lambda f: (load[f], f))
        fold_of_group[g] = target
        load[target] += sizes[g]
    return FoldAssignment(k, tuple(fold_of_group[g] for g in group_ids))


def fold_iter(assignment: FoldAssignment, fold: int) -> tuple[np.ndarray, np.ndarray]:
    """(train indices, validation indices) for one fold."""
    if not 0 <= fold < assignment.k:
        raise IndexError(f"fold {fold} out of range for k={assignment.k}")
    folds = np.asarray(assignment.fold_of)
    return np.nonzero(folds != fold)[0], np.nonzero(folds == fold)[0]
