import json
import math
import random

import numpy as np
import pytest

from conftest import make_records, numeric_catalogue
from iotident.errors import (
    CatalogueMismatchError,
    CorruptModelError,
    DegenerateDataError,
    EmptySearchSpaceError,
    SingleClassWarning,
    VersionMismatchError,
)
from iotident.tree import (
    Hyperparams,
    capture_folds,
    load_model,
    predict,
    predict_records,
    save_model,
    train_tree,
    tune,
)


def three_class_rule(x0: float, x1: float) -> str:
    """Generative oracle: known threshold rule over two features."""
    if x0 < 0.35:
        return "alpha"
    return "beta" if x1 < 0.5 else "gamma"


def three_class_data(n: int, seed: int, n_captures: int = 12):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, 2))
    labels = [three_class_rule(a, b) for a, b in X]
    captures = [f"cap-{i % n_captures:02d}" for i in range(n)]
    return make_records(X, labels, capture_ids=captures)


def test_separable_depth_one():
    X = [[x] for x in list(np.linspace(-10, -0.1, 100)) + list(np.linspace(0.1, 10, 100))]
    y = ["A"] * 100 + ["B"] * 100
    records = make_records(X, y)
    model = train_tree(records, Hyperparams(), numeric_catalogue(1))
    assert model.depth() == 1
    assert model.n_leaves() == 2
    label, conf = predict(model, (-5.0,))
    assert (label, conf) == ("A", 1.0)
    label, conf = predict(model, (5.0,))
    assert (label, conf) == ("B", 1.0)


def test_single_class_returns_one_leaf_with_warning():
    records = make_records([[1.0], [2.0], [3.0]], ["only", "only", "only"])
    with pytest.warns(SingleClassWarning):
        model = train_tree(records, Hyperparams(), numeric_catalogue(1))
    assert model.nodes == [{"counts": [3]}]
    assert predict(model, (99.0,)) == ("only", 1.0)


def test_generative_three_class_accuracy():
    train = three_class_data(10_000, seed=1)
    test = three_class_data(2_000, seed=2)
    cat = numeric_catalogue(2)
    model = train_tree(train, Hyperparams(), cat)
    preds, conf = predict_records(model, test, cat)
    truth = [r.label for r in test]
    acc = sum(p == t for p, t in zip(preds, truth)) / len(truth)
    assert acc >= 0.99
    assert np.all((conf > 0) & (conf <= 1.0))


def test_training_is_deterministic():
    records = three_class_data(3_000, seed=3)
    cat = numeric_catalogue(2)
    m1 = train_tree(records, Hyperparams(max_depth=8), cat)
    m2 = train_tree(records, Hyperparams(max_depth=8), cat)
    assert m1.nodes == m2.nodes
    assert m1.label_table == m2.label_table
    assert m1.feature_importances == m2.feature_importances


def test_monotone_transform_invariance():
    """Strictly increasing transforms of a feature leave predictions unchanged."""
    train = three_class_data(2_000, seed=4)
    test = three_class_data(500, seed=5)
    cat = numeric_catalogue(2)

    def transform(records):
        return [
            type(r)(
                src_mac=r.src_mac, label=r.label, transfer=r.transfer,
                capture_id=r.capture_id, index=r.index,
                features=(math.exp(r.features[0]) * 3.0, r.features[1]),
            )
            for r in records
        ]

    base = train_tree(train, Hyperparams(), cat)
    warped = train_tree(transform(train), Hyperparams(), cat)
    preds_base, _ = predict_records(base, test, cat)
    preds_warped, _ = predict_records(warped, transform(test), cat)
    assert preds_base == preds_warped


def test_leaf_counts_sum_to_training_size():
    records = three_class_data(1_500, seed=6)
    model = train_tree(records, Hyperparams(), numeric_catalogue(2))
    total = sum(sum(n["counts"]) for n in model.nodes if "counts" in n)
    assert total == 1_500


def test_confidence_is_leaf_fraction():
    # overlapping classes force impure leaves
    rng = np.random.default_rng(8)
    X = rng.uniform(0, 1, size=(400, 1))
    y = ["A" if (x < 0.5) != (rng.uniform() < 0.2) else "B" for x in X[:, 0]]
    records = make_records(X, y)
    model = train_tree(records, Hyperparams(max_depth=2), numeric_catalogue(1))
    for fv in [(0.1,), (0.9,), (0.5,)]:
        label, conf = predict(model, fv)
        node = model.nodes[0]
        while "counts" not in node:
            idx = node["left"] if fv[node["feature"]] <= node["threshold"] else node["right"]
            node = model.nodes[idx]
        counts = node["counts"]
        assert conf == counts[model.label_table.index(label)] / sum(counts)
        assert counts[model.label_table.index(label)] == max(counts)


def test_min_samples_constraints():
    records = three_class_data(500, seed=9)
    cat = numeric_catalogue(2)
    stumpy = train_tree(records, Hyperparams(min_samples_split=1000), cat)
    assert stumpy.n_leaves() == 1
    chunky = train_tree(records, Hyperparams(min_samples_leaf=100), cat)
    for node in chunky.nodes:
        if "counts" in node:
            assert sum(node["counts"]) >= 100


def test_max_depth_respected():
    records = three_class_data(2_000, seed=10)
    model = train_tree(records, Hyperparams(max_depth=3), numeric_catalogue(2))
    assert model.depth() <= 3


def test_predict_catalogue_mismatch():
    records = make_records([[1.0, 2.0], [3.0, 4.0]], ["A", "B"])
    model = train_tree(records, Hyperparams(), numeric_catalogue(2))
    with pytest.raises(CatalogueMismatchError):
        predict(model, (1.0,))
    with pytest.raises(CatalogueMismatchError):
        predict_records(model, records, numeric_catalogue(2, version="other-v2"))


def test_unlabeled_records_rejected():
    records = make_records([[1.0], [2.0]], ["A", None])
    with pytest.raises(DegenerateDataError):
        train_tree(records, Hyperparams(), numeric_catalogue(1))


def test_hyperparam_validation():
    with pytest.raises(ValueError):
        Hyperparams(max_depth=0)
    with pytest.raises(ValueError):
        Hyperparams(min_samples_split=1)
    with pytest.raises(ValueError):
        Hyperparams(min_samples_leaf=0)


# -------------------------------------------------------------- persistence

def test_save_load_round_trip(tmp_path):
    records = three_class_data(2_000, seed=11)
    cat = numeric_catalogue(2)
    model = train_tree(records, Hyperparams(max_depth=10), cat)
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path, expect_catalogue_version=cat.version)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        fv = tuple(rng.uniform(-1, 2, size=2))
        assert predict(model, fv) == predict(back, fv)


def test_save_is_byte_deterministic(tmp_path):
    records = three_class_data(1_000, seed=12)
    model = train_tree(records, Hyperparams(), numeric_catalogue(2))
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_model(model, p1)
    save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_model_file(tmp_path):
    records = make_records([[0.0], [1.0]], ["A", "B"])
    model = train_tree(records, Hyperparams(), numeric_catalogue(1))
    path = tmp_path / "model.json"
    save_model(model, path)
    path.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CorruptModelError):
        load_model(path)
    path.write_text(json.dumps({"model_version": 99}))
    with pytest.raises(CorruptModelError):
        load_model(path)


def test_catalogue_version_mismatch(tmp_path):
    records = make_records([[0.0], [1.0]], ["A", "B"])
    model = train_tree(records, Hyperparams(), numeric_catalogue(1, version="v1"))
    path = tmp_path / "model.json"
    save_model(model, path)
    with pytest.raises(VersionMismatchError):
        load_model(path, expect_catalogue_version="v2")
    assert load_model(path, expect_catalogue_version="v1").catalogue_version == "v1"


def test_categorical_encoding_round_trip(tmp_path):
    from iotident.features import CatalogueEntry, FeatureCatalogue

    cat = FeatureCatalogue(
        version="mix-v1",
        entries=(
            CatalogueEntry("num", "numeric", "ip.ttl"),
            CatalogueEntry("proto", "categorical", "proto.label"),
        ),
    )
    rnd = random.Random(3)
    records = []
    from iotident.dataset import PacketRecord

    for i in range(200):
        proto = rnd.choice(["DNS", "TCP", "ARP"])
        label = "A" if proto == "DNS" else "B"
        records.append(
            PacketRecord(
                src_mac=None, label=label, transfer=False, capture_id=f"c{i%4}",
                index=i, features=(float(i % 7), proto),
            )
        )
    model = train_tree(records, Hyperparams(), cat)
    assert model.encoders["proto"] == {"ARP": 0, "DNS": 1, "TCP": 2}
    assert predict(model, (1.0, "DNS"))[0] == "A"
    assert predict(model, (1.0, "TCP"))[0] == "B"
    path = tmp_path / "m.json"
    save_model(model, path)
    assert load_model(path).encoders == model.encoders


# --------------------------------------------------------------------- folds

def test_capture_folds_respect_boundaries():
    records = three_class_data(600, seed=13, n_captures=9)
    folds = capture_folds(records, 3, seed=0)
    all_idx = np.concatenate(folds)
    assert sorted(all_idx.tolist()) == list(range(600))
    for k, fold in enumerate(folds):
        caps = {records[i].capture_id for i in fold.tolist()}
        for other in range(len(folds)):
            if other != k:
                other_caps = {records[i].capture_id for i in folds[other].tolist()}
                assert not caps & other_caps


# ---------------------------------------------------------------------- tune

def test_tune_single_configuration():
    records = three_class_data(800, seed=14)
    result = tune(
        records, numeric_catalogue(2),
        space={"max_depth": [4]}, folds=2, iters=5, seed=0,
    )
    assert result.best.max_depth == 4
    assert all(t.params == {"max_depth": 4} for t in result.trials)


def test_tune_deterministic():
    records = three_class_data(800, seed=15)
    kwargs = dict(
        space={"max_depth": [2, 4, 8, None], "min_samples_leaf": [1, 5]},
        folds=3, iters=6, seed=99,
    )
    r1 = tune(records, numeric_catalogue(2), **kwargs)
    r2 = tune(records, numeric_catalogue(2), **kwargs)
    assert r1.best == r2.best
    assert [t.params for t in r1.trials] == [t.params for t in r2.trials]
    assert [t.mean_score for t in r1.trials] == [t.mean_score for t in r2.trials]


def test_tune_finds_separating_depth():
    records = three_class_data(3_000, seed=16)
    result = tune(
        records, numeric_catalogue(2),
        space={"max_depth": list(range(1, 11))}, folds=3, iters=10, seed=1,
    )
    best_trial = max(result.trials, key=lambda t: t.mean_score)
    assert best_trial.mean_score >= 0.99


def test_tune_empty_space():
    records = three_class_data(100, seed=17)
    with pytest.raises(EmptySearchSpaceError):
        tune(records, numeric_catalogue(2), space={}, folds=2, iters=1, seed=0)
    with pytest.raises(EmptySearchSpaceError):
        tune(records, numeric_catalogue(2), space={"max_depth": []}, folds=2, iters=1, seed=0)
    with pytest.raises(EmptySearchSpaceError):
        tune(records, numeric_catalogue(2), space={"bogus": [1]}, folds=2, iters=1, seed=0)
