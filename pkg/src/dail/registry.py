"""Global class label space and the per-dataset masks built from it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .numerics import Prng


@dataclass(frozen=True)
class ClassTable:
    """Maps every global class label to the dataset that owns it."""

    dataset_of: np.ndarray
    num_datasets: int

    def __post_init__(self):
        d = np.asarray(self.dataset_of, dtype=np.int64)
        d.setflags(write=False)
        object.__setattr__(self, "dataset_of", d)
        if d.ndim != 1 or d.size == 0:
            raise ValueError("class table needs at least one class")
        if d.min() < 0 or d.max() >= self.num_datasets:
            raise ValueError("dataset index out of range")
        if np.any(self.per_dataset_class_count == 0):
            raise ValueError("every dataset must own at least one class")

    @property
    def num_classes(self) -> int:
        return int(self.dataset_of.size)

    @property
    def per_dataset_class_count(self) -> np.ndarray:
        return np.bincount(self.dataset_of, minlength=self.num_datasets)


def build_class_table(pairs: Iterable[tuple[int, int]]) -> ClassTable:
    owner: dict[int, int] = {}
    for cls, ds in pairs:
        cls, ds = int(cls), int(ds)
        if cls in owner and owner[cls] != ds:
            raise ValueError(f"inconsistent class map: class {cls} in datasets {owner[cls]} and {ds}")
        owner[cls] = ds
    if not owner:
        raise ValueError("no classes given")
    num_classes = max(owner) + 1
    if sorted(owner) != list(range(num_classes)):
        raise ValueError("class labels must cover 0..C-1")
    if min(owner.values()) < 0:
        raise ValueError("negative dataset index")
    num_datasets = max(owner.values()) + 1
    dataset_of = np.array([owner[c] for c in range(num_classes)], dtype=np.int64)
    return ClassTable(dataset_of, num_datasets)


def _check_dataset(table: ClassTable, k) -> None:
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= table.num_datasets):
        raise ValueError(f"dataset index out of range [0, {table.num_datasets})")


def dataset_mask(table: ClassTable, k) -> np.ndarray:
    """Boolean mask of the classes owned by dataset ``k``.

    ``k`` may be a scalar (one vector of length C) or an array of per-sample
    dataset ids (an N x C matrix, one row per sample).
    """
    _check_dataset(table, k)
    k = np.asarray(k)
    if k.ndim == 0:
        return table.dataset_of == int(k)
    return table.dataset_of[None, :] == k[:, None]


def crossing_dropout_mask(table: ClassTable, k, p: float, prng: Prng) -> np.ndarray:
    """Dataset mask with each foreign class switched on independently with prob. ``p``.

    A fresh uniform draw is taken for every (sample, class) entry on each call.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"crossing dropout probability {p} outside [0, 1]")
    own = dataset_mask(table, k)
    z = prng.uniform(own.shape)
    return own | (z < p)


def all_ones_mask(table: ClassTable, n: int) -> np.ndarray:
    return np.ones((n, table.num_classes), dtype=bool)
