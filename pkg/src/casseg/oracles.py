"""Slow reference implementations used to cross-check the fast code paths.

Nothing here imports from ``losses``, ``metrics`` or ``postproc``; each
function works straight from the definition with plain loops.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np


def cas_loop(field, labels, alpha: float) -> float:
    """CAS total evaluated with scalar loops over pixels, regions and channels."""
    s = np.asarray(field, dtype=float)
    m = s.shape[-1]
    pts = s.reshape(-1, m).tolist()
    lab = np.asarray(labels).ravel().tolist()
    regions: dict[int, list[list[float]]] = {}
    for v, l in zip(pts, lab):
        regions.setdefault(l, []).append(v)
    means = {}
    for l, vs in regions.items():
        means[l] = [sum(v[c] for v in vs) / len(vs) for c in range(m)]
    uniformer = 0.0
    for l, vs in regions.items():
        acc = 0.0
        for v in vs:
            acc += sum((v[c] - means[l][c]) ** 2 for c in range(m))
        uniformer += alpha * acc / len(vs)
    disc = 0.0
    for i in regions:
        for j in regions:
            if i != j:
                disc += sum((means[i][c] - means[j][c]) ** 2 for c in range(m))
    return uniformer - (1 - alpha) * disc


def central_differences(f: Callable[[np.ndarray], float], x, h: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return grad


def rand_index_pairs(p, q) -> float:
    a = np.asarray(p).ravel().tolist()
    b = np.asarray(q).ravel().tolist()
    agree = total = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        total += 1
        agree += (a[i] == a[j]) == (b[i] == b[j])
    return 1.0 if total == 0 else agree / total


def vi_direct(p, q) -> float:
    """Sum over joint cells of ``-r (log(r/p_i) + log(r/q_j))`` in nats."""
    a = np.asarray(p).ravel().tolist()
    b = np.asarray(q).ravel().tolist()
    n = len(a)
    pa, pb, pab = {}, {}, {}
    for x, y in zip(a, b):
        pa[x] = pa.get(x, 0) + 1
        pb[y] = pb.get(y, 0) + 1
        pab[(x, y)] = pab.get((x, y), 0) + 1
    total = 0.0
    for (x, y), c in pab.items():
        r = c / n
        total -= r * (math.log(r / (pa[x] / n)) + math.log(r / (pb[y] / n)))
    return total


def covering_sets(pred, gt) -> float:
    a = np.asarray(pred).ravel().tolist()
    b = np.asarray(gt).ravel().tolist()
    n = len(a)
    pred_sets: dict[int, set] = {}
    gt_sets: dict[int, set] = {}
    for i, (x, y) in enumerate(zip(a, b)):
        pred_sets.setdefault(x, set()).add(i)
        gt_sets.setdefault(y, set()).add(i)
    total = 0.0
    for g in gt_sets.values():
        best = max(len(g & r) / len(g | r) for r in pred_sets.values())
        total += len(g) / n * best
    return total


def f_beta_loop(b, g, beta_sq: float = 0.3) -> tuple[float, float, float]:
    tp = fp = fn = 0
    for x, y in zip(np.asarray(b).ravel().tolist(), np.asarray(g).ravel().tolist()):
        if x and y:
            tp += 1
        elif x:
            fp += 1
        elif y:
            fn += 1
    if tp + fp == 0 and tp + fn == 0:
        return 1.0, 1.0, 1.0
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    if beta_sq * prec + rec == 0:
        return 0.0, prec, rec
    return (1 + beta_sq) * prec * rec / (beta_sq * prec + rec), prec, rec


def mae_loop(s, g) -> float:
    sv = np.asarray(s, dtype=float).ravel().tolist()
    gv = np.asarray(g, dtype=float).ravel().tolist()
    return sum(abs(x - y) for x, y in zip(sv, gv)) / len(sv)


def threshold_loop(s) -> list[int]:
    sv = np.asarray(s, dtype=float).ravel().tolist()
    t = 2 * sum(sv) / len(sv)
    return [1 if v > t else 0 for v in sv]


def simplex_pair_search(resolution: float = 0.01) -> tuple[float, list]:
    """Grid search of max ||a - b||^2 over pairs of points on the 2-channel simplex.

    Returns the maximum and every pair ``(a, b)`` attaining it (within 1e-12).
    """
    steps = int(round(1 / resolution))
    grid = [(i / steps, 1 - i / steps) for i in range(steps + 1)]
    best, arg = -1.0, []
    for a in grid:
        for b in grid:
            d = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2
            if d > best + 1e-12:
                best, arg = d, [(a, b)]
            elif abs(d - best) <= 1e-12:
                arg.append((a, b))
    return best, arg


def best_two_partition(values) -> tuple[float, list[int]]:
    """Exhaustive search over all 2-way partitions of 1-D values (min within-SSE)."""
    v = list(map(float, values))
    best, arg = math.inf, []
    for bits in itertools.product((0, 1), repeat=len(v)):
        if len(set(bits)) < 2:
            continue
        sse = 0.0
        for k in (0, 1):
            grp = [x for x, bit in zip(v, bits) if bit == k]
            mu = sum(grp) / len(grp)
            sse += sum((x - mu) ** 2 for x in grp)
        if sse < best - 1e-12:
            best, arg = sse, list(bits)
    return best, arg
