# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: Gini split scan, payload entropy, tree descent.

Mirrors _kernels_py exactly; split scores come from integer class counts,
so both backends pick identical splits.
"""

from libc.math cimport log2

import numpy as np

BACKEND = "cython"


def shannon_entropy(data: bytes) -> float:
    """Shannon entropy (bits per byte) of the byte-value distribution."""
    cdef Py_ssize_t n = len(data)
    if n == 0:
        return 0.0
    cdef const unsigned char[::1] buf = data
    cdef long long counts[256]
    cdef Py_ssize_t i
    cdef double ent = 0.0, p
    for i in range(256):
        counts[i] = 0
    for i in range(n):
        counts[buf[i]] += 1
    for i in range(256):
        if counts[i]:
            p = counts[i] / (<double> n)
            ent -= p * log2(p)
    return ent


def best_split_on_feature(double[::1] values, long long[::1] classes,
                          Py_ssize_t n_classes, Py_ssize_t min_leaf):
    """Scan one sorted feature column for the Gini-minimizing threshold.

    Same contract as the Python backend: (score, threshold, n_left), score
    inf when no boundary is valid, ties to the lowest threshold.
    """
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t i, best_i = -1
    cdef long long c, n_left, n_right
    cdef long long left_sq = 0, right_sq = 0
    cdef double score, best = float("inf")
    cdef double lo, hi, mid
    if n < 2:
        return (float("inf"), float("nan"), 0)
    cnt_l_arr = np.zeros(n_classes, dtype=np.int64)
    cnt_r_arr = np.zeros(n_classes, dtype=np.int64)
    cdef long long[::1] cnt_l = cnt_l_arr
    cdef long long[::1] cnt_r = cnt_r_arr
    for i in range(n):
        cnt_r[classes[i]] += 1
    for i in range(n_classes):
        right_sq += cnt_r[i] * cnt_r[i]
    for i in range(n - 1):
        c = classes[i]
        left_sq += 2 * cnt_l[c] + 1
        cnt_l[c] += 1
        right_sq += 1 - 2 * cnt_r[c]
        cnt_r[c] -= 1
        if values[i] != values[i + 1]:
            n_left = i + 1
            n_right = n - n_left
            if n_left >= min_leaf and n_right >= min_leaf:
                score = (n_left - left_sq / (<double> n_left)) + \
                        (n_right - right_sq / (<double> n_right))
                if score < best:
                    best = score
                    best_i = i
    if best_i < 0:
        return (float("inf"), float("nan"), 0)
    lo = values[best_i]
    hi = values[best_i + 1]
    mid = 0.5 * (lo + hi)
    if not (lo <= mid < hi):
        mid = lo
    return (best, mid, best_i + 1)


def tree_apply(double[:, ::1] X, int[::1] feature, double[::1] threshold,
               int[::1] left, int[::1] right):
    """Route each row of X to a leaf; returns the node id per row."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t i
    cdef int node
    out_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] out = out_arr
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out_arr
