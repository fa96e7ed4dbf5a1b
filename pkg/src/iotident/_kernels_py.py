"""Pure-Python (numpy) implementations of the hot kernels.

Fallback for when the compiled extension is unavailable or disabled.
Split scores are derived from exact integer class counts, so this backend
makes bit-identical choices to the compiled one; it is just slower and
hungrier for memory.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def shannon_entropy(data: bytes) -> float:
    """Shannon entropy (bits per byte) of the byte-value distribution."""
    n = len(data)
    if n == 0:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    ent = 0.0
    for c in counts:
        if c:
            p = c / n
            ent -= p * math.log2(p)
    return float(ent)


def best_split_on_feature(values, classes, n_classes, min_leaf):
    """Scan one sorted feature column for the Gini-minimizing threshold.

    values: float64 ascending; classes: int64 class codes aligned with it.
    Returns (score, threshold, n_left) where score is the total-count-scaled
    weighted Gini of the two children (lower is better), or inf when no
    boundary between distinct values satisfies min_leaf. Ties go to the
    lowest threshold.
    """
    n = values.shape[0]
    if n < 2:
        return (math.inf, math.nan, 0)
    onehot = classes[:, None] == np.arange(n_classes, dtype=np.int64)[None, :]
    cum = np.cumsum(onehot, axis=0, dtype=np.int64)
    tot = cum[-1]
    left_sq = np.square(cum[:-1]).sum(axis=1)
    right_sq = np.square(tot[None, :] - cum[:-1]).sum(axis=1)
    n_left = np.arange(1, n, dtype=np.int64)
    n_right = n - n_left
    valid = (values[:-1] != values[1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return (math.inf, math.nan, 0)
    score = (n_left - left_sq / n_left) + (n_right - right_sq / n_right)
    score[~valid] = math.inf
    i = int(np.argmin(score))
    lo = float(values[i])
    hi = float(values[i + 1])
    mid = 0.5 * (lo + hi)
    if not (lo <= mid < hi):
        mid = lo
    return (float(score[i]), mid, i + 1)


def tree_apply(X, feature, threshold, left, right):
    """Route each row of X to a leaf; returns the node id per row."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = np.nonzero(feature[node] >= 0)[0]
    while active.size:
        idx = node[active]
        go_left = X[active, feature[idx]] <= threshold[idx]
        node[active] = np.where(go_left, left[idx], right[idx])
        active = active[feature[node[active]] >= 0]
    return node
