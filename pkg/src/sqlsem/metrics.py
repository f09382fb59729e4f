"""Ranking and thresholded classification metrics; invalid (label 1) is positive.

AUROC is the Mann-Whitney rank statistic with half credit for score ties.
AUPRC is average precision over the ranking sorted by descending score with
ascending original index breaking ties, so results are deterministic.
"""
from __future__ import annotations

import numpy as np

from .errors import SqlsemError


class SingleClass(SqlsemError):
    """AUROC needs at least one positive and one negative."""


class NoPositives(SqlsemError):
    """AUPRC needs at least one positive."""


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if s.size == 0:
        raise ValueError("empty inputs")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie), via midranks."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("both classes are required for AUROC")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision: sum of precision-at-k over positive ranks / n_pos."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("at least one positive is required for AUPRC")
    order = np.lexsort((np.arange(s.size), -s))  # desc score, asc index
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if y[idx] == 1:
            hits += 1
            total += hits / rank
    return total / n_pos


def f1(scores, labels, threshold: float) -> float:
    """F1 of the positive class with predictions = (score >= threshold)."""
    s, y = _validate(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def eval_report(scores, labels, threshold: float) -> dict:
    """The JSON shape the evaluation command emits."""
    s, y = _validate(scores, labels)
    return {
        "auroc": auroc(s, y),
        "auprc": auprc(s, y),
        "f1_at_threshold": f1(s, y, threshold),
        "threshold": float(threshold),
        "n": int(s.size),
        "n_pos": int(y.sum()),
    }
