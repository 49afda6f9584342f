"""Class-agnostic segmentation (CAS) loss and the cross-entropy baselines.

Descriptor fields are arrays of shape ``(..., M)``: any spatial layout
(an H×W image, a flat point set) followed by the descriptor channels. The
partition carries one integer label per spatial position.

The CAS loss of a field ``s`` over regions ``r_1..r_N`` is::

    sum_i alpha/|r_i| * sum_{x in r_i} ||s(x) - mean_i||^2
      - (1 - alpha) * sum_{i != j} ||mean_i - mean_j||^2

where ``mean_i`` is the channel-wise mean descriptor of region ``i`` and the
second sum runs over ordered pairs (each unordered pair counts twice).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import LabelError, ParameterError, ShapeError
from .partition import RegionPartition, as_partition, canonical_labels

CLAMP_EPS = 1e-12
LOSS_KINDS = ("cas", "ce", "cace")


@dataclass(frozen=True)
class CasConfig:
    alpha: float = 0.5

    def __post_init__(self):
        _check_alpha(self.alpha)


@dataclass(frozen=True)
class LossBreakdown:
    """CAS loss with its two terms kept apart.

    ``uniformer_per_region`` holds the unweighted within-region variance of
    each region (indexed by partition label) and ``discriminator_total`` the
    unweighted ordered-pair sum, so
    ``total == alpha * sum(uniformer_per_region) - (1 - alpha) * discriminator_total``.
    """

    total: float
    uniformer_per_region: np.ndarray
    discriminator_total: float


class CaceResult(NamedTuple):
    loss: float
    gradient: np.ndarray
    orientation: str


def _check_alpha(alpha) -> float:
    if isinstance(alpha, CasConfig):
        return alpha.alpha
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _flatten(field, partition):
    s = np.asarray(field, dtype=np.float64)
    part = as_partition(partition)
    if s.ndim < 1 or s.shape[:-1] != part.shape:
        raise ShapeError(
            f"descriptor field {s.shape} does not match partition {part.shape}"
        )
    return s.reshape(-1, s.shape[-1]), part


def _means(s: np.ndarray, labels: np.ndarray, n: int):
    sizes = np.bincount(labels, minlength=n).astype(np.float64)
    sums = np.stack(
        [np.bincount(labels, weights=s[:, m], minlength=n) for m in range(s.shape[1])],
        axis=1,
    )
    return sums / sizes[:, None], sizes


def region_means(field, partition) -> np.ndarray:
    """Channel-wise mean descriptor of every region, shape ``(N, M)``."""
    s, part = _flatten(field, partition)
    means, _ = _means(s, part.labels.ravel(), part.region_count)
    return means


def _canonical(part: RegionPartition):
    # Region order by first raster appearance; makes every sum independent of
    # how the caller happened to name the regions.
    flat = part.labels.ravel()
    canon = canonical_labels(flat)
    to_canon = np.empty(part.region_count, dtype=np.int64)
    to_canon[flat] = canon
    return canon, to_canon


def _discriminator(means: np.ndarray) -> float:
    n = means.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                d = means[i] - means[j]
                total += float(np.dot(d, d))
    return total


def cas_forward(field, partition, alpha: float | CasConfig = 0.5) -> LossBreakdown:
    alpha = _check_alpha(alpha)
    s, part = _flatten(field, partition)
    labels, to_canon = _canonical(part)
    n = part.region_count
    means, sizes = _means(s, labels, n)
    resid = s - means[labels]
    sq = np.einsum("pm,pm->p", resid, resid)
    uniformer = np.bincount(labels, weights=sq, minlength=n) / sizes
    disc = _discriminator(means)
    total = alpha * float(np.sum(uniformer)) - (1.0 - alpha) * disc
    return LossBreakdown(
        total=total,
        uniformer_per_region=uniformer[to_canon],
        discriminator_total=disc,
    )


def cas_backward(field, partition, alpha: float | CasConfig = 0.5) -> np.ndarray:
    """Gradient of the CAS total with respect to every descriptor value.

    For a pixel y in region k::

        2*alpha/|r_k| * (s(y) - mean_k) - 4*(1-alpha)/|r_k| * sum_{j != k} (mean_k - mean_j)

    The chain-rule term through ``mean_k`` in the uniformer vanishes because
    residuals sum to zero over a region.
    """
    alpha = _check_alpha(alpha)
    s, part = _flatten(field, partition)
    labels, _ = _canonical(part)
    n = part.region_count
    means, sizes = _means(s, labels, n)
    spread = n * means - means.sum(axis=0)
    grad = (2.0 * alpha / sizes[labels])[:, None] * (s - means[labels])
    grad -= (4.0 * (1.0 - alpha) / sizes)[labels][:, None] * spread[labels]
    return grad.reshape(np.shape(field))


def cas_bounds(region_count: int, alpha: float | CasConfig = 0.5) -> tuple[float, float]:
    """Interval containing the CAS total for any simplex-valued field.

    Each squared distance between simplex points is at most 2, so every
    uniformer term lies in [0, 2] and every ordered discriminator pair too.
    """
    alpha = _check_alpha(alpha)
    n = int(region_count)
    if n < 1:
        raise ParameterError("need at least one region")
    lower = -2.0 * (1.0 - alpha) * n * (n - 1) + 0.0
    return lower, 2.0 * alpha * n


def ce_loss(probabilities, target) -> tuple[float, np.ndarray]:
    """Mean pixel cross-entropy and its gradient w.r.t. the probabilities."""
    p = np.asarray(probabilities, dtype=np.float64)
    t = np.asarray(target)
    if p.shape[:-1] != t.shape:
        raise ShapeError(f"probabilities {p.shape} do not match target {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= p.shape[-1]):
        raise LabelError(f"target labels must lie in [0, {p.shape[-1]})")
    flat = p.reshape(-1, p.shape[-1])
    idx = t.ravel().astype(np.int64)
    rows = np.arange(idx.size)
    picked = np.clip(flat[rows, idx], CLAMP_EPS, 1.0 - CLAMP_EPS)
    loss = float(np.mean(-np.log(picked)))
    grad = np.zeros_like(flat)
    grad[rows, idx] = -1.0 / (idx.size * picked)
    return loss, grad.reshape(p.shape)


def cace_loss(probabilities, target) -> CaceResult:
    """Class-agnostic CE: the smaller whole-image CE over ``G`` and ``1 - G``.

    Ties keep the original orientation.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    g = np.asarray(target)
    if p.shape[-1] != 2:
        raise ShapeError("CACE expects exactly two channels")
    if not np.all((g == 0) | (g == 1)):
        raise LabelError("CACE target must be a binary mask")
    g = g.astype(np.int64)
    loss, grad = ce_loss(p, g)
    loss_f, grad_f = ce_loss(p, 1 - g)
    if loss_f < loss:
        return CaceResult(loss_f, grad_f, "flipped")
    return CaceResult(loss, grad, "original")


def batch_loss(
    kind: str, probabilities, targets: Sequence, alpha: float = 0.5
) -> tuple[float, np.ndarray]:
    """Mean of per-sample losses over a leading batch axis, with gradient."""
    p = np.asarray(probabilities, dtype=np.float64)
    if len(targets) != p.shape[0]:
        raise ShapeError(f"{p.shape[0]} outputs but {len(targets)} targets")
    b = p.shape[0]
    grad = np.empty_like(p)
    total = 0.0
    for i, target in enumerate(targets):
        if kind == "cas":
            loss = cas_forward(p[i], target, alpha).total
            g = cas_backward(p[i], target, alpha)
        elif kind == "ce":
            loss, g = ce_loss(p[i], target)
        elif kind == "cace":
            loss, g, _ = cace_loss(p[i], target)
        else:
            raise ParameterError(f"unknown loss kind {kind!r}")
        total += loss
        grad[i] = g / b
    return total / b, grad


def loss_terms(kind: str, probabilities, targets: Sequence, alpha: float = 0.5) -> np.ndarray:
    """Additive pieces of :func:`batch_loss`; they sum to the batch loss.

    Cross-entropy losses split per pixel, CAS per image (region means couple
    the pixels of one image). Differencing two evaluations piece by piece
    cancels every untouched piece exactly, which keeps finite-difference
    estimates clear of the rounding in a long sum.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if len(targets) != p.shape[0]:
        raise ShapeError(f"{p.shape[0]} outputs but {len(targets)} targets")
    b = p.shape[0]
    pieces = []
    for i, target in enumerate(targets):
        if kind == "cas":
            pieces.append(np.array([cas_forward(p[i], target, alpha).total / b]))
            continue
        t = np.asarray(target).astype(np.int64)
        if kind == "cace":
            if cace_loss(p[i], t).orientation == "flipped":
                t = 1 - t
        elif kind != "ce":
            raise ParameterError(f"unknown loss kind {kind!r}")
        ce_loss(p[i], t)  # validation only
        flat = p[i].reshape(-1, p.shape[-1])
        picked = np.clip(flat[np.arange(t.size), t.ravel()], CLAMP_EPS, 1.0 - CLAMP_EPS)
        pieces.append(-np.log(picked) / (t.size * b))
    return np.concatenate(pieces)
