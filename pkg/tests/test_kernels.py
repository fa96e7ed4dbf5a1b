import math
import random

import numpy as np
import pytest

from iotident import _kernels_py

try:
    from iotident import _kernels
except ImportError:
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled kernels not built")


def test_python_backend_entropy_basics():
    assert _kernels_py.shannon_entropy(b"") == 0.0
    assert _kernels_py.shannon_entropy(b"\x07" * 50) == 0.0
    assert abs(_kernels_py.shannon_entropy(bytes(range(256))) - 8.0) < 1e-12


@needs_compiled
def test_entropy_backends_agree_bitwise():
    rnd = random.Random(0)
    for _ in range(300):
        data = bytes(rnd.randrange(256) for _ in range(rnd.randrange(0, 512)))
        assert _kernels.shannon_entropy(data) == _kernels_py.shannon_entropy(data)


@needs_compiled
def test_split_backends_agree_exactly():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = rng.integers(2, 400)
        n_classes = int(rng.integers(2, 6))
        values = np.sort(
            rng.choice([0.0, 1.0, 2.5, 7.0, -1.0], size=n)
            if rng.uniform() < 0.5
            else rng.normal(size=n)
        )
        classes = rng.integers(0, n_classes, size=n).astype(np.int64)
        min_leaf = int(rng.integers(1, 4))
        got_c = _kernels.best_split_on_feature(values, classes, n_classes, min_leaf)
        got_p = _kernels_py.best_split_on_feature(values, classes, n_classes, min_leaf)
        if math.isinf(got_c[0]):
            assert math.isinf(got_p[0])
        else:
            assert got_c == got_p  # bit-identical scores, thresholds, positions


@needs_compiled
def test_tree_apply_backends_agree():
    rng = np.random.default_rng(2)
    # small random tree: nodes 0..2 internal, 3..6 leaves
    feature = np.array([0, 1, 0, -1, -1, -1, -1], dtype=np.int32)
    threshold = np.array([0.5, -0.2, 1.5, 0, 0, 0, 0], dtype=np.float64)
    left = np.array([1, 3, 5, -1, -1, -1, -1], dtype=np.int32)
    right = np.array([2, 4, 6, -1, -1, -1, -1], dtype=np.int32)
    X = np.ascontiguousarray(rng.normal(size=(500, 2)))
    out_c = _kernels.tree_apply(X, feature, threshold, left, right)
    out_p = _kernels_py.tree_apply(X, feature, threshold, left, right)
    assert np.array_equal(out_c, out_p)
    assert set(out_c.tolist()) <= {3, 4, 5, 6}


@needs_compiled
def test_trained_trees_identical_across_backends():
    from iotident import kernels
    from iotident.tree import Hyperparams, train_tree
    from conftest import make_records, numeric_catalogue

    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, size=(2000, 4))
    labels = [str(int(a * 3) + int(b > 0.5) * 3) for a, b in zip(X[:, 0], X[:, 1])]
    records = make_records(X, labels)
    cat = numeric_catalogue(4)
    original = kernels.BACKEND
    try:
        kernels.use_backend("cython")
        m_c = train_tree(records, Hyperparams(), cat)
        kernels.use_backend("python")
        m_p = train_tree(records, Hyperparams(), cat)
    finally:
        kernels.use_backend(original)
    assert m_c.nodes == m_p.nodes


def test_use_backend_rejects_unknown():
    from iotident import kernels

    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


def test_python_split_no_valid_boundary():
    values = np.array([3.0, 3.0, 3.0], dtype=np.float64)
    classes = np.array([0, 1, 0], dtype=np.int64)
    score, thr, pos = _kernels_py.best_split_on_feature(values, classes, 2, 1)
    assert math.isinf(score)


def test_python_split_min_leaf_blocks_edges():
    values = np.array([0.0, 1.0, 2.0, 3.0], dtype=np.float64)
    classes = np.array([0, 0, 1, 1], dtype=np.int64)
    score, thr, n_left = _kernels_py.best_split_on_feature(values, classes, 2, 2)
    assert n_left == 2
    assert thr == 1.5
