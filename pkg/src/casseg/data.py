"""Synthetic datasets, label corruption, pre-processing and PGM file IO.

Every random draw comes from numpy's PCG64 generator keyed by
``SeedSequence([seed, stream])``, so each generator is a pure function of
its integer seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError, GenerationError, ParameterError, ParseError, ShapeError

# stream ids keep independent draws from sharing a generator
_TRAIN, _TEST, _LAYOUT, _PIXELS, _CORRUPT, _SPLIT = range(6)


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class Sample:
    input: np.ndarray
    partition: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        spatial = self.input.shape if self.input.ndim == self.partition.ndim else self.input.shape[:-1]
        if spatial != self.partition.shape:
            raise ShapeError(f"partition {self.partition.shape} does not match input {self.input.shape}")
        if self.mask is not None and self.mask.shape != self.partition.shape:
            raise ShapeError("mask and partition shapes differ")


@dataclass
class Dataset:
    samples: list[Sample]
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def save_manifest(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)


def _manifest(generator: str, seed: int, params: dict) -> dict:
    return {"generator": generator, "seed": int(seed), "params": params, "flipped_indices": []}


# -- generators ---------------------------------------------------------------


def gen_toy_imbalance(
    seed: int,
    n1: int = 10000,
    n2: int = 10,
    c1: Sequence[float] = (1.0, 0.0),
    c2: Sequence[float] = (0.0, 1.0),
    sigma: float = 0.2,
) -> tuple[Dataset, Dataset]:
    """Two Gaussian blobs in 2-D with a heavy class imbalance.

    Returns independent train and test draws. Each is a single sample whose
    input is the ``(n1 + n2, 2)`` point array and whose partition holds the
    class labels (0 for the ``c1`` blob, 1 for ``c2``). ``sigma`` is the
    per-component standard deviation.
    """
    if n1 < 1 or n2 < 1:
        raise ParameterError("each class needs at least one point")
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    params = {"n1": n1, "n2": n2, "c1": list(map(float, c1)), "c2": list(map(float, c2)), "sigma": sigma}
    out = []
    for stream in (_TRAIN, _TEST):
        rng = rng_for(seed, stream)
        pts = np.concatenate(
            [
                np.asarray(c1, float) + sigma * rng.standard_normal((n1, 2)),
                np.asarray(c2, float) + sigma * rng.standard_normal((n2, 2)),
            ]
        )
        labels = np.concatenate([np.zeros(n1, np.int64), np.ones(n2, np.int64)])
        meta = _manifest("toy_imbalance", seed, dict(params, split="train" if stream == _TRAIN else "test"))
        out.append(Dataset([Sample(pts, labels)], meta))
    return out[0], out[1]


def _rect_partition(rng, height: int, width: int, min_frac: float, max_frac: float) -> np.ndarray:
    area = height * width
    for _ in range(1000):
        h = int(rng.integers(1, height + 1))
        w = int(rng.integers(1, width + 1))
        if min_frac * area <= h * w <= max_frac * area and h * w < area:
            break
    else:
        raise GenerationError("could not place a salient rectangle")
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    labels = np.zeros((height, width), np.int64)
    labels[top : top + h, left : left + w] = 1
    return labels


def _voronoi_partition(rng, height: int, width: int, n: int) -> np.ndarray:
    # Sites keep a minimum spacing so no cell degenerates to a sliver.
    spacing = 0.5 * math.sqrt(height * width / n)
    for _ in range(200):
        flat = rng.choice(height * width, size=n, replace=False)
        sites = np.stack([flat // width, flat % width], axis=1).astype(float)
        d = np.sqrt(((sites[:, None] - sites[None]) ** 2).sum(-1))
        if n == 1 or d[np.triu_indices(n, 1)].min() >= spacing:
            break
    yy, xx = np.mgrid[0:height, 0:width]
    dist = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    return np.argmin(dist, axis=-1).astype(np.int64)


def gen_synthetic_segmentation(
    seed: int,
    height: int = 64,
    width: int = 64,
    region_count: int = 2,
    textures: Sequence[Sequence[float]] = ((0.2, 0.05), (0.8, 0.05)),
    n_samples: int = 1,
    salient_fraction: tuple[float, float] = (0.1, 0.35),
) -> Dataset:
    """Piecewise-textured gray images with their region partitions.

    Region ``i`` is filled with Gaussian noise of ``textures[i] = (mean, std)``.
    Two regions give a saliency sample: region 1 is an axis-aligned rectangle
    covering ``salient_fraction`` of the image, and the binary mask equals it.
    Three or more regions come from a Voronoi tessellation of seeded sites.
    """
    n = int(region_count)
    if n < 2:
        raise GenerationError("need at least two regions")
    if n > height * width:
        raise GenerationError(f"{n} regions cannot fit in {height}x{width} pixels")
    if len(textures) != n:
        raise GenerationError(f"{len(textures)} textures for {n} regions")
    means = [float(t[0]) for t in textures]
    if len(set(means)) != n:
        raise GenerationError("region texture means must be pairwise distinct")
    layout_rng = rng_for(seed, _LAYOUT)
    pixel_rng = rng_for(seed, _PIXELS)
    mu = np.array(means)
    sd = np.array([float(t[1]) for t in textures])
    samples = []
    for _ in range(n_samples):
        if n == 2:
            labels = _rect_partition(layout_rng, height, width, *salient_fraction)
        else:
            labels = _voronoi_partition(layout_rng, height, width, n)
        noise = pixel_rng.standard_normal((height, width))
        image = mu[labels] + sd[labels] * noise
        mask = labels.copy() if n == 2 else None
        samples.append(Sample(image, labels, mask))
    params = {
        "height": height,
        "width": width,
        "region_count": n,
        "textures": [[float(a), float(b)] for a, b in textures],
        "n_samples": n_samples,
        "salient_fraction": list(salient_fraction),
    }
    return Dataset(samples, _manifest("synthetic_segmentation", seed, params))


# -- corruption ---------------------------------------------------------------


def _non_identity_permutation(rng, n: int) -> np.ndarray:
    while True:
        perm = rng.permutation(n)
        if not np.array_equal(perm, np.arange(n)):
            return perm


def corrupt_low_fidelity(ds: Dataset, p: float = 0.5, seed: int = 0) -> Dataset:
    """Corrupt region labels (never region geometry) of a random subset.

    Each sample is hit with probability ``p``. Binary masks are inverted; a
    multi-region partition gets a uniformly random non-identity relabeling.
    The manifest records which samples were hit.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError("p must lie in [0, 1]")
    rng = rng_for(seed, _CORRUPT)
    draws = rng.random(len(ds))
    flipped = []
    samples = []
    for i, (sample, u) in enumerate(zip(ds.samples, draws)):
        if u >= p:
            samples.append(sample)
            continue
        flipped.append(i)
        if sample.mask is not None:
            mask = 1 - sample.mask
            samples.append(replace(sample, mask=mask, partition=mask.copy()))
        else:
            n = int(sample.partition.max()) + 1
            perm = _non_identity_permutation(rng, n) if n > 1 else np.arange(n)
            samples.append(replace(sample, partition=perm[sample.partition]))
    manifest = dict(ds.manifest)
    manifest["flipped_indices"] = flipped
    manifest["corruption"] = {"p": p, "seed": int(seed)}
    return Dataset(samples, manifest)


# -- pre-processing -----------------------------------------------------------


def _check_target(image: np.ndarray, target: tuple[int, int]) -> tuple[int, int]:
    th, tw = (int(t) for t in target)
    if th < 1 or tw < 1:
        raise ShapeError(f"target size must be positive, got {target}")
    if image.size == 0:
        raise ShapeError("empty image")
    return th, tw


def resize_bilinear(image, target: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an ``(H, W)`` or ``(H, W, C)`` image."""
    img = np.asarray(image, dtype=np.float64)
    th, tw = _check_target(img, target)
    h, w = img.shape[:2]

    def axis(n_out, n_in):
        pos = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(th, h)
    x0, x1, fx = axis(tw, w)
    if img.ndim == 3:
        fy, fx = fy[:, None, None], fx[None, :, None]
    else:
        fy, fx = fy[:, None], fx[None, :]
    # a + (b - a) * f keeps constant images exactly constant
    top = img[y0][:, x0] + (img[y0][:, x1] - img[y0][:, x0]) * fx
    bottom = img[y1][:, x0] + (img[y1][:, x1] - img[y1][:, x0]) * fx
    return top + (bottom - top) * fy


def resize_nearest(labels, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize for masks and partitions."""
    arr = np.asarray(labels)
    th, tw = _check_target(arr, target)
    h, w = arr.shape[:2]
    ys = np.minimum(((np.arange(th) + 0.5) * h / th).astype(int), h - 1)
    xs = np.minimum(((np.arange(tw) + 0.5) * w / tw).astype(int), w - 1)
    return arr[ys][:, xs]


def standardize(image, stats: tuple[float, float] | None = None) -> np.ndarray:
    """``(x - mean) / max(std, 1e-8)``; statistics come from ``image`` unless given."""
    img = np.asarray(image, dtype=np.float64)
    if stats is not None:
        return (img - stats[0]) / max(stats[1], 1e-8)
    centred = img - img.mean()
    # second pass removes the rounding left in the first mean, which the
    # 1e-8 floor would otherwise blow up for near-constant images
    centred -= centred.mean()
    return centred / max(float(img.std()), 1e-8)


def dataset_stats(images: Sequence) -> tuple[float, float]:
    """Pooled pixel mean and standard deviation over a collection of images."""
    flat = np.concatenate([np.asarray(im, dtype=np.float64).ravel() for im in images])
    return float(flat.mean()), float(flat.std())


def preprocess(image, target: tuple[int, int], stats: tuple[float, float] | None = None) -> np.ndarray:
    """Bilinear resize to ``target`` then standardize.

    By default each image is standardized on its own; pass pooled training
    ``stats`` to apply one shared affine map to every image instead.
    """
    return standardize(resize_bilinear(image, target), stats)


# -- splitting ----------------------------------------------------------------


def split(ds: Dataset, ratio: tuple[float, float] = (6, 4), seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then contiguous train/test split.

    The test size is ``round(n * test / (train + test))``; train keeps the rest.
    """
    if len(ds) == 0:
        raise DataError("cannot split an empty dataset")
    a, b = (float(r) for r in ratio)
    if a < 0 or b < 0 or a + b <= 0:
        raise ParameterError("ratios must be non-negative and not both zero")
    n = len(ds)
    n_test = int(round(n * b / (a + b)))
    order = rng_for(seed, _SPLIT).permutation(n)
    train_idx, test_idx = order[: n - n_test], order[n - n_test :]

    def take(idx, name):
        manifest = dict(ds.manifest, split=name, indices=[int(i) for i in idx])
        return Dataset([ds.samples[i] for i in idx], manifest)

    return take(train_idx, "train"), take(test_idx, "test")


# -- PGM (P5) IO --------------------------------------------------------------


def _read_header(buf: bytes):
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated header", start)
        fields.append((buf[start:pos], start))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(buf):
        raise ParseError("missing raster", pos)
    return fields, pos + 1


def pgm_decode(buf: bytes) -> tuple[np.ndarray, int]:
    """Parse a binary graymap; returns raw integer levels and maxval."""
    if buf[:2] != b"P5":
        raise ParseError(f"bad magic {buf[:2]!r}, expected b'P5'", 0)
    fields, offset = _read_header(buf)
    values = []
    for raw, at in fields[1:]:
        try:
            values.append(int(raw))
        except ValueError:
            raise ParseError(f"expected an integer, got {raw!r}", at) from None
    width, height, maxval = values
    if width < 1 or height < 1:
        raise ParseError(f"image must be non-empty, got {width}x{height}", fields[1][1])
    if not 0 < maxval < 65536:
        raise ParseError(f"maxval {maxval} outside 1..65535", fields[3][1])
    depth = 1 if maxval < 256 else 2
    need = width * height * depth
    payload = buf[offset : offset + need]
    if len(payload) < need:
        raise ParseError(f"raster has {len(payload)} bytes, needs {need}", offset + len(payload))
    dtype = np.uint8 if depth == 1 else np.dtype(">u2")
    levels = np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.int64)
    if levels.max() > maxval:
        raise ParseError("sample exceeds maxval", offset)
    return levels, maxval


def pgm_encode(levels: np.ndarray, maxval: int) -> bytes:
    levels = np.asarray(levels)
    if levels.ndim != 2 or levels.size == 0:
        raise ShapeError("PGM images are non-empty 2-D arrays")
    if not 0 < maxval < 65536:
        raise ParameterError("maxval must lie in 1..65535")
    if levels.min() < 0 or levels.max() > maxval:
        raise ParameterError(f"levels must lie in [0, {maxval}]")
    h, w = levels.shape
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    return b"P5\n%d %d\n%d\n" % (w, h, maxval) + levels.astype(dtype).tobytes()


def pgm_read(path: str | os.PathLike) -> np.ndarray:
    """Read a P5 graymap as floats in [0, 1]."""
    with open(path, "rb") as fh:
        levels, maxval = pgm_decode(fh.read())
    return levels / maxval


def pgm_write(path: str | os.PathLike, image, maxval: int = 255) -> None:
    """Write values in [0, 1] as a P5 graymap, quantized to ``maxval`` levels."""
    img = np.asarray(image, dtype=np.float64)
    if np.any(img < 0) or np.any(img > 1) or not np.all(np.isfinite(img)):
        raise ParameterError("PGM intensities must lie in [0, 1]")
    with open(path, "wb") as fh:
        fh.write(pgm_encode(np.rint(img * maxval).astype(np.int64), maxval))


def pgm_read_labels(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        levels, _ = pgm_decode(fh.read())
    return levels


def pgm_write_labels(path: str | os.PathLike, labels) -> None:
    """Store a mask or partition with gray level equal to the label."""
    labels = np.asarray(labels, dtype=np.int64)
    maxval = max(int(labels.max()), 1)
    with open(path, "wb") as fh:
        fh.write(pgm_encode(labels, 255 if maxval < 256 else 65535))
