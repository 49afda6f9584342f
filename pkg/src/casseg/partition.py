"""Region partitions: integer label maps where every label in [0, N) occurs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LabelError, ShapeError


@dataclass(frozen=True, eq=False)
class RegionPartition:
    labels: np.ndarray
    region_count: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if labels.size == 0:
            raise ShapeError("partition must cover at least one pixel")
        n = int(self.region_count)
        if labels.min() < 0 or labels.max() >= n:
            raise LabelError(f"labels must lie in [0, {n})")
        if np.unique(labels).size != n:
            raise LabelError(f"some of the {n} labels never occur")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "region_count", n)

    @classmethod
    def from_labels(cls, labels) -> "RegionPartition":
        """Compact arbitrary integer labels to [0, N) in first-occurrence order."""
        return cls(canonical_labels(labels), int(np.unique(np.asarray(labels)).size))

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.region_count)

    def __eq__(self, other):
        if not isinstance(other, RegionPartition):
            return NotImplemented
        return self.region_count == other.region_count and np.array_equal(
            self.labels, other.labels
        )


def canonical_labels(labels) -> np.ndarray:
    """Relabel so regions are numbered by first appearance in raster order.

    Two label maps describing the same partition geometry map to the same
    output, whatever names the regions had.
    """
    labels = np.asarray(labels)
    flat = labels.ravel()
    values, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(values.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(values.size)
    return rank[inverse].reshape(labels.shape)


def as_partition(obj) -> RegionPartition:
    if isinstance(obj, RegionPartition):
        return obj
    return RegionPartition.from_labels(obj)
