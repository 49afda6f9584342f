"""Turn per-pixel descriptors into a region partition.

Descriptors are clustered with k-means, then connected fragments below a
size floor are merged into the neighbouring region with the closest mean
descriptor. The merge step stands in for dense-CRF smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: list[float]


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    closest = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(len(x), p=closest / total)
        else:
            idx = rng.integers(len(x))
        centers.append(x[idx])
        closest = np.minimum(closest, ((x - x[idx]) ** 2).sum(1))
    return np.array(centers)


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    A cluster that ends up empty is re-seeded at the point farthest from its
    current centre. Returned labels are compacted to [0, clusters used).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("points must be an (n, d) array")
    if k < 1:
        raise ParameterError("k must be at least 1")
    if k > len(x):
        raise ParameterError(f"k={k} exceeds the {len(x)} points")
    rng = np.random.default_rng(seed)
    centers = _plusplus(x, k, rng)
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    history = []
    for _ in range(max_iters):
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
        d = _sq_dists(x, centers)
        dist = d[np.arange(len(x)), labels]
        counts = np.bincount(labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            if dist[far] == 0:
                break
            centers[c] = x[far]
            counts[labels[far]] -= 1
            labels[far] = c
            dist[far] = 0.0
        history.append(float(dist.sum()))
        new = np.argmin(_sq_dists(x, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    used = np.unique(labels)
    remap = np.full(k, -1)
    remap[used] = np.arange(used.size)
    return KMeansResult(remap[labels], centers[used], history)


def kmeans_descriptors(field, k: int = 20, seed: int = 0, max_iters: int = 100) -> np.ndarray:
    """Cluster the descriptors of an ``(H, W, M)`` field into at most ``k`` regions."""
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 3:
        raise ShapeError("descriptor field must be (H, W, M)")
    result = kmeans(f.reshape(-1, f.shape[-1]), k, seed, max_iters)
    return result.labels.reshape(f.shape[:2])


def connected_regions(labels) -> tuple[np.ndarray, int]:
    """Split a label map into 4-connected components numbered from 0."""
    labels = np.asarray(labels)
    comp = np.full(labels.shape, -1, dtype=np.int64)
    count = 0
    for value in np.unique(labels):
        lab, n = ndimage.label(labels == value, structure=_FOUR_CONNECTED)
        comp[lab > 0] = lab[lab > 0] - 1 + count
        count += n
    return comp, count


def _adjacency(comp: np.ndarray, n: int) -> list[set]:
    neighbours = [set() for _ in range(n)]
    for a, b in (
        (comp[:, :-1], comp[:, 1:]),
        (comp[:-1, :], comp[1:, :]),
    ):
        edge = a != b
        for u, v in set(zip(a[edge].tolist(), b[edge].tolist())):
            neighbours[u].add(v)
            neighbours[v].add(u)
    return neighbours


def absorb_small_regions(partition, field, min_fraction: float = 0.02) -> np.ndarray:
    """Merge connected regions smaller than ``min_fraction`` of the image.

    Undersized regions, smallest first, are relabeled to the adjacent region
    whose mean descriptor is nearest (squared distance). A region whose
    neighbourhood already changed waits for the next pass, when components
    are recomputed. Passes repeat until no undersized region remains or only
    one region is left. Surviving labels are compacted in increasing order, so a
    partition with nothing to merge comes back unchanged.
    """
    labels = np.array(partition, dtype=np.int64)
    f = np.asarray(field, dtype=np.float64)
    if labels.ndim != 2 or f.shape[:2] != labels.shape:
        raise ShapeError(f"partition {labels.shape} does not match field {f.shape}")
    flat_f = f.reshape(labels.size, -1)
    floor = min_fraction * labels.size
    merged = False
    while True:
        comp, n = connected_regions(labels)
        if n <= 1:
            break
        sizes = np.bincount(comp.ravel(), minlength=n)
        small = [c for c in np.argsort(sizes, kind="stable") if sizes[c] < floor]
        if not small:
            break
        flat_comp = comp.ravel()
        means = np.stack(
            [np.bincount(flat_comp, weights=flat_f[:, m], minlength=n) for m in range(flat_f.shape[1])],
            axis=1,
        ) / sizes[:, None]
        neighbours = _adjacency(comp, n)
        touched = set()
        for c in small:
            if c in touched:
                continue
            nbrs = sorted(neighbours[c])
            d = [float(((means[c] - means[j]) ** 2).sum()) for j in nbrs]
            target = nbrs[int(np.argmin(d))]
            labels[comp == c] = labels[comp == target].flat[0]
            touched.update(neighbours[c])
            touched.update((c, target))
            merged = True
    if not merged:
        return labels
    return np.unique(labels, return_inverse=True)[1].reshape(labels.shape)
