"""Evaluation metrics: RMSE, Pearson correlation, Spearman correlation.

Spearman uses average ranks for ties (each tie group receives the mean
of the rank span it occupies).
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = ["rmse", "lcc", "srcc", "average_ranks"]


def _pair(pred, label) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    l = np.asarray(label, dtype=np.float64)
    if p.ndim != 1 or l.ndim != 1:
        raise ShapeError("metric inputs must be 1-D sequences")
    if len(p) != len(l):
        raise ShapeError(f"length mismatch: {len(p)} predictions vs {len(l)} labels")
    return p, l


def rmse(pred, label) -> float:
    p, l = _pair(pred, label)
    if len(p) == 0:
        raise ShapeError("rmse of empty sequences")
    return float(np.sqrt(np.mean((p - l) ** 2)))


def lcc(pred, label) -> float | None:
    """Pearson correlation; None when undefined (n < 2 or zero variance)."""
    p, l = _pair(pred, label)
    if len(p) < 2:
        return None
    pc = p - p.mean()
    lc = l - l.mean()
    sp = float(np.dot(pc, pc))
    sl = float(np.dot(lc, lc))
    if sp == 0.0 or sl == 0.0:
        return None
    return float(np.dot(pc, lc) / np.sqrt(sp * sl))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tie groups get the mean rank of their span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def srcc(pred, label) -> float | None:
    """Spearman rank correlation with average-rank tie handling."""
    p, l = _pair(pred, label)
    if len(p) < 2:
        return None
    return lcc(average_ranks(p), average_ranks(l))
