"""CART decision tree: training, tuning, prediction, persistence.

Splits greedily minimize weighted Gini impurity over thresholds at
midpoints of sorted distinct values. Ties break toward the lowest feature
index, then the lowest threshold. Training is fully deterministic; the
seed field only matters to the tuner's random search.

Categorical features are dictionary-encoded to integers when the design
matrix is built, and the dictionaries are persisted beside the model.
"""

from __future__ import annotations

import json
import math
import random
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import kernels
from .dataset import PacketRecord
from .errors import (
    CatalogueMismatchError,
    CorruptModelError,
    DegenerateDataError,
    EmptySearchSpaceError,
    SingleClassWarning,
    VersionMismatchError,
)
from .features import FeatureCatalogue, FeatureVector
from .metrics import evaluate

MODEL_FORMAT_VERSION = 1

UNSEEN_CATEGORY_CODE = -1.0


@dataclass(frozen=True)
class Hyperparams:
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


# Default random-search space for the tuner.
DEFAULT_SEARCH_SPACE: dict[str, tuple] = {
    "max_depth": (5, 10, 15, 20, None),
    "min_samples_split": (2, 5, 10),
    "min_samples_leaf": (1, 2, 5),
}


@dataclass
class DecisionTreeModel:
    """Trained tree plus everything needed to score a raw FeatureVector."""

    catalogue_version: str
    feature_names: tuple[str, ...]
    feature_kinds: tuple[str, ...]
    label_table: tuple[str, ...]
    encoders: dict[str, dict[str, int]]
    nodes: list[dict]
    hyperparams: Hyperparams
    feature_importances: tuple[float, ...]
    _flat: Optional[tuple] = field(default=None, repr=False, compare=False)

    def depth(self) -> int:
        def walk(i: int) -> int:
            node = self.nodes[i]
            if "counts" in node:
                return 0
            return 1 + max(walk(node["left"]), walk(node["right"]))

        return walk(0)

    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if "counts" in n)

    def flat_arrays(self):
        """Node arrays for the batch-apply kernel (cached)."""
        if self._flat is None:
            m = len(self.nodes)
            feat = np.full(m, -1, dtype=np.int32)
            thr = np.zeros(m, dtype=np.float64)
            left = np.full(m, -1, dtype=np.int32)
            right = np.full(m, -1, dtype=np.int32)
            counts = np.zeros((m, len(self.label_table)), dtype=np.int64)
            for i, node in enumerate(self.nodes):
                if "counts" in node:
                    counts[i] = node["counts"]
                else:
                    feat[i] = node["feature"]
                    thr[i] = node["threshold"]
                    left[i] = node["left"]
                    right[i] = node["right"]
            self._flat = (feat, thr, left, right, counts)
        return self._flat


def build_encoders(
    records: Sequence[PacketRecord], catalogue: FeatureCatalogue
) -> dict[str, dict[str, int]]:
    """Category -> integer code dictionaries for categorical features."""
    encoders: dict[str, dict[str, int]] = {}
    for j, (name, kind) in enumerate(zip(catalogue.names, catalogue.kinds)):
        if kind != "categorical":
            continue
        cats = sorted({str(rec.features[j]) for rec in records})
        encoders[name] = {c: i for i, c in enumerate(cats)}
    return encoders


def encode_value(value, kind: str, encoder: Optional[Mapping[str, int]]) -> float:
    if kind == "numeric":
        return float(value)
    if kind == "boolean":
        return 1.0 if value else 0.0
    assert encoder is not None
    return float(encoder.get(str(value), UNSEEN_CATEGORY_CODE))


def design_matrix(
    records: Sequence[PacketRecord],
    catalogue: FeatureCatalogue,
    encoders: Mapping[str, Mapping[str, int]],
) -> np.ndarray:
    """Dense float64 matrix, one row per record, columns in catalogue order."""
    n, f = len(records), len(catalogue)
    X = np.empty((n, f), dtype=np.float64)
    for j, (name, kind) in enumerate(zip(catalogue.names, catalogue.kinds)):
        if kind == "numeric":
            X[:, j] = [rec.features[j] for rec in records]
        elif kind == "boolean":
            X[:, j] = [1.0 if rec.features[j] else 0.0 for rec in records]
        else:
            enc = encoders[name]
            X[:, j] = [
                enc.get(str(rec.features[j]), UNSEEN_CATEGORY_CODE) for rec in records
            ]
    return X


def grow_tree(
    X: np.ndarray, y: np.ndarray, n_classes: int, hp: Hyperparams
) -> tuple[list[dict], np.ndarray]:
    """Grow CART nodes on an encoded matrix; returns (nodes, importances).

    Nodes are in depth-first preorder, left child before right.
    Importances are the total-sample-normalized Gini decreases per feature.
    """
    n_total, n_features = X.shape
    y = np.ascontiguousarray(y, dtype=np.int64)
    nodes: list[dict] = []
    importances = np.zeros(n_features, dtype=np.float64)
    stack: list[tuple[np.ndarray, int, int, str]] = [
        (np.arange(n_total, dtype=np.intp), 0, -1, "")
    ]
    while stack:
        idx, depth, parent, side = stack.pop()
        node_id = len(nodes)
        if parent >= 0:
            nodes[parent][side] = node_id
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.int64)
        n_here = idx.shape[0]
        pure = int(counts.max()) == n_here
        at_limit = (
            n_here < hp.min_samples_split
            or (hp.max_depth is not None and depth >= hp.max_depth)
        )
        best_feature = -1
        best_score = math.inf
        best_thr = math.nan
        if not pure and not at_limit:
            # parent impurity on the same total-count scale as the kernel
            parent_score = n_here - float(np.square(counts).sum()) / n_here
            for f in range(n_features):
                col = X[idx, f]
                order = np.argsort(col, kind="mergesort")
                vals = np.ascontiguousarray(col[order])
                cls = np.ascontiguousarray(y[idx][order])
                score, thr, _ = kernels.best_split_on_feature(
                    vals, cls, n_classes, hp.min_samples_leaf
                )
                if score < best_score:
                    best_score, best_feature, best_thr = score, f, thr
            if best_feature >= 0 and not best_score < parent_score - 1e-12:
                best_feature = -1
        if best_feature < 0:
            nodes.append({"counts": [int(c) for c in counts]})
            continue
        importances[best_feature] += (parent_score - best_score) / n_total
        nodes.append(
            {"feature": best_feature, "threshold": best_thr, "left": -1, "right": -1}
        )
        mask = X[idx, best_feature] <= best_thr
        stack.append((idx[~mask], depth + 1, node_id, "right"))
        stack.append((idx[mask], depth + 1, node_id, "left"))
    return nodes, importances


def train_tree(
    records: Sequence[PacketRecord],
    hp: Hyperparams,
    catalogue: FeatureCatalogue,
) -> DecisionTreeModel:
    """Train a CART tree on labeled records. Deterministic given inputs."""
    if not records:
        raise DegenerateDataError("no records to train on")
    unlabeled = sum(1 for r in records if r.label is None)
    if unlabeled:
        raise DegenerateDataError(f"{unlabeled} records lack labels")
    label_table = tuple(sorted({r.label for r in records}))
    encoders = build_encoders(records, catalogue)
    if len(label_table) == 1:
        warnings.warn(
            f"training data has a single class {label_table[0]!r}; "
            "the model is one leaf",
            SingleClassWarning,
            stacklevel=2,
        )
        nodes = [{"counts": [len(records)]}]
        importances = np.zeros(len(catalogue))
    else:
        X = design_matrix(records, catalogue, encoders)
        code = {lab: i for i, lab in enumerate(label_table)}
        y = np.array([code[r.label] for r in records], dtype=np.int64)
        nodes, importances = grow_tree(X, y, len(label_table), hp)
    return DecisionTreeModel(
        catalogue_version=catalogue.version,
        feature_names=catalogue.names,
        feature_kinds=catalogue.kinds,
        label_table=label_table,
        encoders=encoders,
        nodes=nodes,
        hyperparams=hp,
        feature_importances=tuple(float(v) for v in importances),
    )


def _leaf_prediction(model: DecisionTreeModel, counts: Sequence[int]) -> tuple[str, float]:
    total = sum(counts)
    best_i = 0
    best_c = counts[0]
    for i in range(1, len(counts)):
        if counts[i] > best_c:
            best_i, best_c = i, counts[i]
    return model.label_table[best_i], best_c / total


def encode_vector(model: DecisionTreeModel, fv: FeatureVector) -> np.ndarray:
    if len(fv) != len(model.feature_names):
        raise CatalogueMismatchError(
            f"vector has {len(fv)} values, model expects {len(model.feature_names)}"
        )
    row = np.empty(len(fv), dtype=np.float64)
    for j, (name, kind) in enumerate(zip(model.feature_names, model.feature_kinds)):
        row[j] = encode_value(fv[j], kind, model.encoders.get(name))
    return row


def predict(model: DecisionTreeModel, fv: FeatureVector) -> tuple[str, float]:
    """Label and leaf-fraction confidence for one feature vector."""
    row = encode_vector(model, fv)
    node = model.nodes[0]
    while "counts" not in node:
        node = model.nodes[
            node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
        ]
    return _leaf_prediction(model, node["counts"])


def predict_matrix(model: DecisionTreeModel, X: np.ndarray) -> tuple[list[str], np.ndarray]:
    """Batch prediction over an already-encoded design matrix."""
    feat, thr, left, right, counts = model.flat_arrays()
    leaf_ids = kernels.tree_apply(np.ascontiguousarray(X, dtype=np.float64), feat, thr, left, right)
    leaf_counts = counts[leaf_ids]
    totals = leaf_counts.sum(axis=1)
    best = np.argmax(leaf_counts, axis=1)
    conf = leaf_counts[np.arange(len(leaf_ids)), best] / totals
    labels = [model.label_table[i] for i in best]
    return labels, conf


def predict_records(
    model: DecisionTreeModel,
    records: Sequence[PacketRecord],
    catalogue: FeatureCatalogue,
) -> tuple[list[str], np.ndarray]:
    if catalogue.version != model.catalogue_version:
        raise CatalogueMismatchError(
            f"model built for catalogue {model.catalogue_version!r}, "
            f"active is {catalogue.version!r}"
        )
    X = design_matrix(records, catalogue, model.encoders)
    return predict_matrix(model, X)


def capture_folds(records: Sequence[PacketRecord], folds: int, seed: int) -> list[np.ndarray]:
    """Fold index arrays built on capture-file boundaries.

    Capture groups are dealt greedily (largest first) onto the lightest
    fold, so whole files never straddle folds. Falls back to record-level
    folds (seeded shuffle) when there are fewer captures than folds.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(rec.capture_id or "", []).append(i)
    if len(groups) >= folds and "" not in groups:
        ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        loads = [0] * folds
        fold_members: list[list[int]] = [[] for _ in range(folds)]
        for _, idxs in ordered:
            k = loads.index(min(loads))
            fold_members[k].extend(idxs)
            loads[k] += len(idxs)
        return [np.array(sorted(m), dtype=np.intp) for m in fold_members]
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    return [np.array(sorted(chunk), dtype=np.intp) for chunk in np.array_split(order, folds)]


@dataclass
class TuneTrial:
    params: dict
    fold_scores: tuple[float, ...]
    mean_score: float


@dataclass
class TuneResult:
    best: Hyperparams
    trials: list[TuneTrial]


def tune(
    records: Sequence[PacketRecord],
    catalogue: FeatureCatalogue,
    space: Optional[Mapping[str, Sequence]] = None,
    folds: int = 3,
    iters: int = 20,
    seed: int = 0,
) -> TuneResult:
    """Random hyperparameter search scored by cross-validated macro-F1.

    Folds respect capture-file boundaries. Deterministic given seed; the
    best mean-score configuration wins, earlier trials win ties.
    """
    space = dict(DEFAULT_SEARCH_SPACE if space is None else space)
    if not space or any(len(v) == 0 for v in space.values()):
        raise EmptySearchSpaceError("hyperparameter space has no configurations")
    unknown = set(space) - {"max_depth", "min_samples_split", "min_samples_leaf"}
    if unknown:
        raise EmptySearchSpaceError(f"unknown hyperparameters: {sorted(unknown)}")
    rng = random.Random(seed)
    fold_idx = capture_folds(records, folds, seed)
    records = list(records)
    trials: list[TuneTrial] = []
    cache: dict[tuple, tuple[float, ...]] = {}
    best_hp: Optional[Hyperparams] = None
    best_mean = -math.inf
    for _ in range(iters):
        params = {k: rng.choice(list(space[k])) for k in sorted(space)}
        key = tuple(sorted(params.items(), key=lambda kv: kv[0]))
        if key not in cache:
            hp = Hyperparams(seed=seed, **params)
            scores = []
            for k in range(len(fold_idx)):
                test_ids = set(fold_idx[k].tolist())
                train_recs = [records[i] for i in range(len(records)) if i not in test_ids]
                test_recs = [records[i] for i in sorted(test_ids)]
                if not train_recs or not test_recs:
                    continue
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SingleClassWarning)
                    model = train_tree(train_recs, hp, catalogue)
                preds, _ = predict_records(model, test_recs, catalogue)
                truth = [r.label for r in test_recs]
                scores.append(evaluate(truth, preds).macro_f1)
            cache[key] = tuple(scores)
        scores = cache[key]
        mean = sum(scores) / len(scores) if scores else 0.0
        trials.append(TuneTrial(params=params, fold_scores=scores, mean_score=mean))
        if mean > best_mean:
            best_mean = mean
            best_hp = Hyperparams(seed=seed, **params)
    assert best_hp is not None
    return TuneResult(best=best_hp, trials=trials)


def save_model(model: DecisionTreeModel, path: Union[str, Path]) -> None:
    """Persist as versioned, self-describing JSON. Deterministic bytes."""
    doc = {
        "model_version": MODEL_FORMAT_VERSION,
        "catalogue_version": model.catalogue_version,
        "feature_names": list(model.feature_names),
        "feature_kinds": list(model.feature_kinds),
        "label_table": list(model.label_table),
        "encoders": model.encoders,
        "hyperparams": asdict(model.hyperparams),
        "feature_importances": list(model.feature_importances),
        "nodes": model.nodes,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(
    path: Union[str, Path], expect_catalogue_version: Optional[str] = None
) -> DecisionTreeModel:
    """Load a model file; rejects catalogue mismatches and corrupt files."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("model_version") != MODEL_FORMAT_VERSION:
        raise CorruptModelError(f"{path}: not a model file of format {MODEL_FORMAT_VERSION}")
    try:
        model = DecisionTreeModel(
            catalogue_version=doc["catalogue_version"],
            feature_names=tuple(doc["feature_names"]),
            feature_kinds=tuple(doc["feature_kinds"]),
            label_table=tuple(doc["label_table"]),
            encoders={k: dict(v) for k, v in doc["encoders"].items()},
            nodes=list(doc["nodes"]),
            hyperparams=Hyperparams(**doc["hyperparams"]),
            feature_importances=tuple(doc["feature_importances"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"{path}: {exc}") from exc
    for node in model.nodes:
        if "counts" in node:
            if not node["counts"] or sum(node["counts"]) <= 0:
                raise CorruptModelError(f"{path}: leaf with empty counts")
        elif not {"feature", "threshold", "left", "right"} <= set(node):
            raise CorruptModelError(f"{path}: malformed internal node")
    if (
        expect_catalogue_version is not None
        and model.catalogue_version != expect_catalogue_version
    ):
        raise VersionMismatchError(
            f"model catalogue {model.catalogue_version!r} != active "
            f"{expect_catalogue_version!r}"
        )
    return model
