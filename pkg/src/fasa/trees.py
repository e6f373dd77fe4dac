"""Bagged depth-limited CART trees, used only for split-gain feature importance."""

from __future__ import annotations

import numpy as np


def _gini_parts(pos: np.ndarray, count: np.ndarray) -> np.ndarray:
    # count * gini, which is what a weighted impurity decrease needs
    p = pos / count
    return count * 2.0 * p * (1.0 - p)


def _best_split(X: np.ndarray, y: np.ndarray):
    n = y.size
    parent = _gini_parts(np.array([y.sum()]), np.array([n]))[0]
    best = (0.0, -1, 0.0)
    if parent == 0.0:
        return best
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="mergesort")
        xs, ys = X[order, f], y[order]
        valid = np.flatnonzero(xs[1:] != xs[:-1])  # split after index i
        if valid.size == 0:
            continue
        left_n = valid + 1.0
        left_pos = np.cumsum(ys)[valid]
        right_n = n - left_n
        right_pos = ys.sum() - left_pos
        gain = parent - _gini_parts(left_pos, left_n) - _gini_parts(right_pos, right_n)
        j = int(np.argmax(gain))
        if gain[j] > best[0] + 1e-12:
            i = valid[j]
            best = (float(gain[j]), f, 0.5 * (xs[i] + xs[i + 1]))
    return best


def _grow(X, y, depth, max_depth, min_samples, importance):
    if depth >= max_depth or y.size < min_samples:
        return
    gain, f, thr = _best_split(X, y)
    if f < 0:
        return
    importance[f] += gain
    left = X[:, f] <= thr
    _grow(X[left], y[left], depth + 1, max_depth, min_samples, importance)
    _grow(X[~left], y[~left], depth + 1, max_depth, min_samples, importance)


def split_gain_importance(
    X: np.ndarray,
    y: np.ndarray,
    *,
    n_trees: int = 10,
    max_depth: int = 3,
    sample_size: int = 20000,
    min_samples: int = 2,
    seed: int = 0,
) -> np.ndarray:
    """Total Gini impurity decrease per feature summed over bootstrap trees, normalized to 1.

    Returns all zeros when no split improves impurity anywhere.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    rng = np.random.default_rng(seed)
    importance = np.zeros(X.shape[1])
    m = min(sample_size, y.size)
    for _ in range(n_trees):
        idx = rng.integers(0, y.size, size=m)
        _grow(X[idx], y[idx], 0, max_depth, min_samples, importance)
    total = importance.sum()
    return importance / total if total > 0 else importance
