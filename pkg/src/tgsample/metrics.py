"""Ranking and classification metrics with explicit tie handling.

Ties are resolved by mid-rank: a score tied with ``g`` others is treated as
if it sat in the middle of its tied block. Without ties every metric here
reduces to its textbook definition.
"""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"{s.size} scores vs {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be binary")
    return s, y.astype(bool)


def _tie_groups(s):
    """Descending order, group ids per sorted position, group sizes."""
    order = np.argsort(-s, kind="stable")
    ss = s[order]
    new = np.empty(ss.size, dtype=bool)
    new[:1] = True
    new[1:] = ss[1:] != ss[:-1]
    gid = np.cumsum(new) - 1
    return order, gid


def average_precision(scores, labels) -> float:
    """Mean over positives of the precision at each positive's mid-rank.

    For a positive with ``a`` items scored strictly higher (``a_pos`` of
    them positive) and ``g`` tied items besides itself (``g_pos`` positive),
    precision is ``(a_pos + 1 + g_pos/2) / (a + 1 + g/2)``.
    """
    s, y = _prep(scores, labels)
    if not y.any():
        raise MetricError("average precision needs at least one positive")
    order, gid = _tie_groups(s)
    ys = y[order]
    n_groups = gid[-1] + 1
    size = np.bincount(gid, minlength=n_groups)
    pos = np.bincount(gid, weights=ys, minlength=n_groups)
    above = np.concatenate([[0], np.cumsum(size)[:-1]])
    above_pos = np.concatenate([[0.0], np.cumsum(pos)[:-1]])
    prec = (above_pos + 1 + (pos - 1) / 2) / (above + 1 + (size - 1) / 2)
    return float(np.sum(prec * pos) / pos.sum())


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(score_pos == score_neg)."""
    s, y = _prep(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes")
    order = np.argsort(s, kind="stable")
    ss = s[order]
    new = np.empty(ss.size, dtype=bool)
    new[:1] = True
    new[1:] = ss[1:] != ss[:-1]
    gid = np.cumsum(new) - 1
    size = np.bincount(gid)
    first = np.concatenate([[0], np.cumsum(size)[:-1]])
    midrank = first + (size + 1) / 2.0  # 1-based average ranks
    ranks = np.empty(s.size)
    ranks[order] = midrank[gid]
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy_at_threshold(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of items whose ``score >= threshold`` agrees with the label."""
    s, y = _prep(scores, labels)
    if s.size == 0:
        return float("nan")
    return float(np.mean((s >= threshold) == y))


def mrr(queries) -> float:
    """Mean reciprocal (mid-)rank of the single positive in each query.

    ``queries`` is an iterable of ``(scores, labels)`` pairs with exactly one
    positive label per query.
    """
    recip = []
    for scores, labels in queries:
        s, y = _prep(scores, labels)
        if y.sum() != 1:
            raise MetricError("each query needs exactly one positive")
        sp = s[y][0]
        neg = s[~y]
        rank = 1 + np.sum(neg > sp) + 0.5 * np.sum(neg == sp)
        recip.append(1.0 / rank)
    if not recip:
        raise MetricError("no queries")
    return float(np.mean(recip))


def summarize(scores, labels, threshold: float = 0.5) -> dict:
    return {
        "ap": average_precision(scores, labels),
        "auc": roc_auc(scores, labels),
        "acc": accuracy_at_threshold(scores, labels, threshold),
    }
