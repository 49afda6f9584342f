"""Saliency and region-partition evaluation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError, ShapeError

BETA_SQ = 0.3


class BinaryMap(NamedTuple):
    values: np.ndarray
    threshold: float


class FScore(NamedTuple):
    f: float
    precision: float
    recall: float


@dataclass
class MetricsReport:
    f_beta: float | None = None
    mae: float | None = None
    precision: float | None = None
    recall: float | None = None
    rand_index: float | None = None
    variation_of_information: float | None = None
    covering: float | None = None
    confusion: list | None = None
    chosen_channel: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != {}}


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def adaptive_threshold(s) -> BinaryMap:
    """Binarize at twice the map mean, exactly as written (no clamp at 1)."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        raise ShapeError("empty saliency map")
    t = 2.0 * float(s.mean())
    return BinaryMap((s > t).astype(np.int64), t)


def f_beta(b, g, beta_sq: float = BETA_SQ) -> FScore:
    """Weighted F-measure of a binary map against a binary mask.

    Both maps empty scores 1. Otherwise an empty prediction has precision 0,
    an empty mask has recall 0, and F is 0 when both P and R are 0.
    """
    b = np.asarray(b).astype(bool)
    g = np.asarray(g).astype(bool)
    _same_shape(b, g)
    tp = int(np.count_nonzero(b & g))
    n_pred = int(np.count_nonzero(b))
    n_true = int(np.count_nonzero(g))
    if n_pred == 0 and n_true == 0:
        return FScore(1.0, 1.0, 1.0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    denom = beta_sq * precision + recall
    if denom == 0:
        return FScore(0.0, precision, recall)
    return FScore((1 + beta_sq) * precision * recall / denom, precision, recall)


def mae(s, g) -> float:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _same_shape(s, g)
    return float(np.mean(np.abs(s - g)))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        return 0.0
    return float(np.dot(xc, yc) / denom)


def channel_correlations(fields: Sequence, masks: Sequence) -> np.ndarray:
    if len(fields) == 0:
        raise DataError("channel selection needs at least one validation sample")
    if len(fields) != len(masks):
        raise ShapeError("one mask per descriptor field required")
    for f, m in zip(fields, masks):
        if np.shape(f)[:-1] != np.shape(m):
            raise ShapeError(f"field {np.shape(f)} does not match mask {np.shape(m)}")
    stacked = np.concatenate([np.asarray(f, np.float64).reshape(-1, np.shape(f)[-1]) for f in fields])
    target = np.concatenate([np.asarray(m, np.float64).ravel() for m in masks])
    return np.array([_pearson(stacked[:, c], target) for c in range(stacked.shape[1])])


def select_channel(fields: Sequence, masks: Sequence) -> int:
    """Index of the channel with the largest signed Pearson correlation to the masks.

    Constant channels count as correlation 0; ties go to the lowest index.
    """
    return int(np.argmax(channel_correlations(fields, masks)))


def confusion(predicted: Sequence[int], actual: Sequence[int], classes: int = 2) -> np.ndarray:
    """Count matrix indexed ``[predicted][actual]``."""
    p = np.asarray(predicted, dtype=np.int64).ravel()
    a = np.asarray(actual, dtype=np.int64).ravel()
    if p.shape != a.shape:
        raise ShapeError(f"{p.size} predictions for {a.size} labels")
    counts = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(counts, (p, a), 1)
    return counts


def contingency(p, q) -> np.ndarray:
    p = np.asarray(p)
    q = np.asarray(q)
    _same_shape(p, q)
    _, pi = np.unique(p.ravel(), return_inverse=True)
    _, qi = np.unique(q.ravel(), return_inverse=True)
    table = np.zeros((pi.max() + 1, qi.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, qi), 1)
    return table


def _pairs(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    return x * (x - 1) / 2


def rand_index(p, q) -> float:
    """Fraction of unordered pixel pairs on which the two partitions agree."""
    table = contingency(p, q)
    n = table.sum()
    total = n * (n - 1) / 2
    if total == 0:
        return 1.0
    same_both = _pairs(table).sum()
    same_p = _pairs(table.sum(axis=1)).sum()
    same_q = _pairs(table.sum(axis=0)).sum()
    disagree = same_p + same_q - 2 * same_both
    return float((total - disagree) / total)


def _entropy(counts: np.ndarray, n: float) -> float:
    pr = counts[counts > 0] / n
    return float(-np.sum(pr * np.log(pr)))


def variation_of_information(p, q) -> float:
    """``H(P) + H(Q) - 2 I(P; Q)`` in nats."""
    table = contingency(p, q).astype(np.float64)
    n = table.sum()
    hp = _entropy(table.sum(axis=1), n)
    hq = _entropy(table.sum(axis=0), n)
    joint = _entropy(table.ravel(), n)
    # I = H(P) + H(Q) - H(P, Q)
    return max(0.0, 2 * joint - hp - hq)


def covering(pred, gt) -> float:
    """Size-weighted best IoU of each ground-truth region against the prediction."""
    table = contingency(gt, pred).astype(np.float64)
    n = table.sum()
    gt_sizes = table.sum(axis=1)
    pred_sizes = table.sum(axis=0)
    union = gt_sizes[:, None] + pred_sizes[None, :] - table
    iou = table / union
    return float(np.sum(gt_sizes / n * iou.max(axis=1)))
