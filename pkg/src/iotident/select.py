"""Two-stage feature selection and the session-feature leakage audit.

Stage one scores every feature with four techniques (chi-square,
mutual information, bagged-tree impurity importance, permutation
importance on a holdout) and votes out features that never rank well.
Stage two runs a genetic-algorithm wrapper search whose fitness is the
macro-F1 of a tree trained on masked features and scored on a
capture-isolated validation split.

The audit quantifies how session-identifying fields (IP ID, TCP
sequence/acknowledgment numbers, raw ports) inflate cross-validation
scores relative to capture-isolated splits. Those fields are decoded
here, on purpose outside the main layer decoder, so the catalogue path
stays blind to them by construction.
"""

from __future__ import annotations

import csv
import math
import random
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import tree
from .dataset import PacketRecord
from .errors import DegenerateDataError, EmptyResultError, SingleClassWarning
from .features import FeatureCatalogue
from .metrics import evaluate
from .pcapio import LINKTYPE_ETHERNET

TECHNIQUES = ("chi2", "mutual_info", "tree_importance", "permutation")


@dataclass
class VoteReport:
    feature_names: tuple[str, ...]
    techniques: tuple[str, ...]
    scores: dict[str, tuple[float, ...]]  # technique -> per-feature score
    votes: tuple[int, ...]
    cut_rank: int


@dataclass(frozen=True)
class GAConfig:
    population: int = 50
    generations: int = 30
    crossover_rate: float = 0.9
    mutation_rate: Optional[float] = None  # default 1/len(pool)
    tournament_k: int = 3
    seed: int = 0
    holdout_ratio: float = 0.25

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        if self.mutation_rate is not None and not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must be in [0, 1]")
        if self.tournament_k < 2:
            raise ValueError("tournament_k must be >= 2")
        if not 0.0 < self.holdout_ratio < 1.0:
            raise ValueError("holdout_ratio must be in (0, 1)")


@dataclass
class GAResult:
    mask: tuple[bool, ...]
    selected: tuple[str, ...]
    fitness: float
    trace: tuple[float, ...]  # best-so-far fitness, one entry per generation
    train_captures: frozenset[str]
    val_captures: frozenset[str]
    evaluations: int


def _bin_columns(X: np.ndarray, kinds: Sequence[str], n_bins: int) -> list[np.ndarray]:
    """Per-feature integer bin assignments for the contingency scorers."""
    binned = []
    for j, kind in enumerate(kinds):
        col = X[:, j]
        if kind == "numeric":
            lo, hi = col.min(), col.max()
            if lo == hi:
                binned.append(np.zeros(len(col), dtype=np.intp))
            else:
                b = np.minimum(
                    ((col - lo) / (hi - lo) * n_bins).astype(np.intp), n_bins - 1
                )
                binned.append(b)
        else:
            _, inv = np.unique(col, return_inverse=True)
            binned.append(inv.astype(np.intp))
    return binned


def _contingency(bins: np.ndarray, y: np.ndarray, n_classes: int) -> np.ndarray:
    n_bins = int(bins.max()) + 1
    table = np.zeros((n_bins, n_classes), dtype=np.int64)
    np.add.at(table, (bins, y), 1)
    return table


def _chi2_stat(table: np.ndarray) -> float:
    n = table.sum()
    if n == 0 or table.shape[0] < 2:
        return 0.0
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (table - expected) ** 2 / expected, 0.0)
    return float(terms.sum())


def _mutual_info_bits(table: np.ndarray) -> float:
    n = table.sum()
    if n == 0 or table.shape[0] < 2:
        return 0.0
    p = table / n
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p / (px * py)), 0.0)
    return float(max(terms.sum(), 0.0))


def _macro_f1_codes(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    truth = [str(v) for v in y_true.tolist()]
    pred = [str(v) for v in y_pred.tolist()]
    return evaluate(truth, pred).macro_f1


def _fit_predict(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    n_classes: int,
    hp: tree.Hyperparams,
) -> np.ndarray:
    nodes, _ = tree.grow_tree(X_train, y_train, n_classes, hp)
    m = len(nodes)
    feat = np.full(m, -1, dtype=np.int32)
    thr = np.zeros(m, dtype=np.float64)
    left = np.full(m, -1, dtype=np.int32)
    right = np.full(m, -1, dtype=np.int32)
    counts = np.zeros((m, n_classes), dtype=np.int64)
    for i, node in enumerate(nodes):
        if "counts" in node:
            counts[i] = node["counts"]
        else:
            feat[i], thr[i] = node["feature"], node["threshold"]
            left[i], right[i] = node["left"], node["right"]
    from . import kernels

    leaf = kernels.tree_apply(np.ascontiguousarray(X_test), feat, thr, left, right)
    return np.argmax(counts[leaf], axis=1)


def _holdout_by_capture(
    records: Sequence[PacketRecord], ratio: float, seed: int
) -> tuple[np.ndarray, np.ndarray, frozenset, frozenset]:
    """Capture-isolated (train_idx, val_idx, train_caps, val_caps).

    ratio is the validation share. Falls back to a record-level split when
    fewer than two captures exist.
    """
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault(rec.capture_id or "", []).append(i)
    names = sorted(groups)
    if len(names) >= 2 and "" not in groups:
        rng = random.Random(f"{seed}:holdout")
        shuffled = names[:]
        rng.shuffle(shuffled)
        n_val = max(1, min(len(names) - 1, round(ratio * len(names))))
        val_caps = set(shuffled[:n_val])
        train_caps = set(shuffled[n_val:])
        val_idx = sorted(i for c in val_caps for i in groups[c])
        train_idx = sorted(i for c in train_caps for i in groups[c])
        return (
            np.array(train_idx, dtype=np.intp),
            np.array(val_idx, dtype=np.intp),
            frozenset(train_caps),
            frozenset(val_caps),
        )
    order = list(range(len(records)))
    random.Random(f"{seed}:holdout").shuffle(order)
    n_val = max(1, round(ratio * len(order)))
    val_idx = sorted(order[:n_val])
    train_idx = sorted(order[n_val:])
    return (
        np.array(train_idx, dtype=np.intp),
        np.array(val_idx, dtype=np.intp),
        frozenset(),
        frozenset(),
    )


def _rank_pass(scores: np.ndarray, cut_rank: int) -> np.ndarray:
    """True where a feature ranks above the cut with a positive score."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    passed = np.zeros(len(scores), dtype=bool)
    passed[order[:cut_rank]] = True
    return passed & (scores > 0)


def score_features(
    records: Sequence[PacketRecord],
    catalogue: FeatureCatalogue,
    seed: int = 0,
    per_class: bool = False,
    n_bins: int = 16,
    n_trees: int = 10,
    bag_depth: int = 12,
    holdout_ratio: float = 0.25,
) -> VoteReport:
    """Score every feature with the four techniques and count votes.

    A feature earns one vote per technique where it ranks in the top half
    with a positive score. per_class=True scores each technique one-vs-rest
    per device instead, and a feature passes a technique if it passes for
    any device (the reported score is the per-device maximum).
    """
    if any(r.label is None for r in records):
        raise DegenerateDataError("unlabeled records in scoring input")
    labels = sorted({r.label for r in records})
    if len(labels) < 2:
        raise DegenerateDataError("need at least 2 classes to score features")
    encoders = tree.build_encoders(records, catalogue)
    X = tree.design_matrix(records, catalogue, encoders)
    code = {lab: i for i, lab in enumerate(labels)}
    y = np.array([code[r.label] for r in records], dtype=np.int64)
    n_classes = len(labels)
    n_features = len(catalogue)
    cut_rank = math.ceil(n_features / 2)

    targets: list[np.ndarray]
    if per_class:
        targets = [(y == c).astype(np.int64) for c in range(n_classes)]
    else:
        targets = [y]

    binned = _bin_columns(X, catalogue.kinds, n_bins)
    hp_bag = tree.Hyperparams(max_depth=bag_depth)
    train_idx, val_idx, _, _ = _holdout_by_capture(records, holdout_ratio, seed)

    scores: dict[str, np.ndarray] = {}
    passes: dict[str, np.ndarray] = {t: np.zeros(n_features, dtype=bool) for t in TECHNIQUES}
    for tech in TECHNIQUES:
        scores[tech] = np.zeros(n_features)

    for target in targets:
        n_target_classes = int(target.max()) + 1
        if n_target_classes < 2:
            continue
        chi = np.array(
            [_chi2_stat(_contingency(binned[j], target, n_target_classes)) for j in range(n_features)]
        )
        mi = np.array(
            [_mutual_info_bits(_contingency(binned[j], target, n_target_classes)) for j in range(n_features)]
        )
        imp = np.zeros(n_features)
        for t in range(n_trees):
            rng = np.random.default_rng((seed, t))
            boot = rng.integers(0, len(target), len(target))
            _, tree_imp = tree.grow_tree(X[boot], target[boot], n_target_classes, hp_bag)
            imp += tree_imp
        imp /= n_trees
        perm = np.zeros(n_features)
        if len(train_idx) and len(val_idx) and len(np.unique(target[train_idx])) >= 2:
            preds = _fit_predict(X[train_idx], target[train_idx], X[val_idx], n_target_classes, hp_bag)
            baseline = _macro_f1_codes(target[val_idx], preds)
            X_val = X[val_idx]
            for j in range(n_features):
                rng = np.random.default_rng((seed, 1000 + j))
                shuffled = X_val.copy()
                shuffled[:, j] = rng.permutation(shuffled[:, j])
                preds = _fit_predict(X[train_idx], target[train_idx], shuffled, n_target_classes, hp_bag)
                perm[j] = baseline - _macro_f1_codes(target[val_idx], preds)
        for tech, vec in (("chi2", chi), ("mutual_info", mi), ("tree_importance", imp), ("permutation", perm)):
            scores[tech] = np.maximum(scores[tech], vec)
            passes[tech] |= _rank_pass(vec, cut_rank)

    votes = sum(passes[t].astype(int) for t in TECHNIQUES)
    return VoteReport(
        feature_names=catalogue.names,
        techniques=TECHNIQUES,
        scores={t: tuple(float(v) for v in scores[t]) for t in TECHNIQUES},
        votes=tuple(int(v) for v in votes),
        cut_rank=cut_rank,
    )


def vote_filter(report: VoteReport, min_votes: int = 1) -> tuple[list[str], list[str]]:
    """(retained, removed) feature names by vote count."""
    retained = [n for n, v in zip(report.feature_names, report.votes) if v >= min_votes]
    removed = [n for n, v in zip(report.feature_names, report.votes) if v < min_votes]
    if not retained:
        raise EmptyResultError(f"no feature received {min_votes} vote(s)")
    return retained, removed


def ga_select(
    records: Sequence[PacketRecord],
    pool: Sequence[str],
    cfg: GAConfig,
    catalogue: FeatureCatalogue,
    hp: Optional[tree.Hyperparams] = None,
) -> GAResult:
    """Wrapper GA over a feature pool, maximizing validation macro-F1.

    Tournament selection, uniform crossover, per-bit mutation, elitism of
    one. Fitness never touches records outside the internal train/val
    split, which is capture-isolated. Deterministic given cfg.seed.
    """
    pool = list(pool)
    name_to_col = {n: j for j, n in enumerate(catalogue.names)}
    missing = [n for n in pool if n not in name_to_col]
    if missing:
        raise ValueError(f"pool features not in catalogue: {missing}")
    if not pool:
        raise EmptyResultError("empty feature pool")
    if any(r.label is None for r in records):
        raise DegenerateDataError("unlabeled records in GA input")
    labels = sorted({r.label for r in records})
    if len(labels) < 2:
        raise DegenerateDataError("need at least 2 classes")
    encoders = tree.build_encoders(records, catalogue)
    X_full = tree.design_matrix(records, catalogue, encoders)
    cols = np.array([name_to_col[n] for n in pool], dtype=np.intp)
    X = np.ascontiguousarray(X_full[:, cols])
    code = {lab: i for i, lab in enumerate(labels)}
    y = np.array([code[r.label] for r in records], dtype=np.int64)
    n_classes = len(labels)
    hp = hp or tree.Hyperparams()

    train_idx, val_idx, train_caps, val_caps = _holdout_by_capture(
        records, cfg.holdout_ratio, cfg.seed
    )
    assert not (set(train_caps) & set(val_caps))
    X_train, y_train = X[train_idx], y[train_idx]
    X_val, y_val = X[val_idx], y[val_idx]

    cache: dict[tuple[bool, ...], float] = {}
    evaluations = 0

    def fitness(mask: tuple[bool, ...]) -> float:
        nonlocal evaluations
        if mask in cache:
            return cache[mask]
        active = [j for j, bit in enumerate(mask) if bit]
        preds = _fit_predict(
            np.ascontiguousarray(X_train[:, active]),
            y_train,
            np.ascontiguousarray(X_val[:, active]),
            n_classes,
            hp,
        )
        score = _macro_f1_codes(y_val, preds)
        cache[mask] = score
        evaluations += 1
        return score

    rng = random.Random(cfg.seed)
    n_bits = len(pool)
    mrate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / n_bits

    def ensure_nonzero(bits: list[bool]) -> list[bool]:
        if not any(bits):
            bits[rng.randrange(n_bits)] = True
        return bits

    population = [
        tuple(ensure_nonzero([rng.random() < 0.5 for _ in range(n_bits)]))
        for _ in range(cfg.population)
    ]
    fits = [fitness(ind) for ind in population]
    best_mask, best_fit = max(zip(population, fits), key=lambda pf: pf[1])
    trace = [best_fit]

    def tournament() -> tuple[bool, ...]:
        best_i = rng.randrange(cfg.population)
        for _ in range(cfg.tournament_k - 1):
            i = rng.randrange(cfg.population)
            if fits[i] > fits[best_i]:
                best_i = i
        return population[best_i]

    for _ in range(cfg.generations):
        gen_best = max(range(cfg.population), key=lambda i: (fits[i], -i))
        new_pop = [population[gen_best]]
        while len(new_pop) < cfg.population:
            p1, p2 = tournament(), tournament()
            if rng.random() < cfg.crossover_rate:
                child = [p1[j] if rng.random() < 0.5 else p2[j] for j in range(n_bits)]
            else:
                child = list(p1)
            child = [bit ^ (rng.random() < mrate) for bit in child]
            new_pop.append(tuple(ensure_nonzero(child)))
        population = new_pop
        fits = [fitness(ind) for ind in population]
        for ind, f in zip(population, fits):
            if f > best_fit:
                best_fit, best_mask = f, ind
        trace.append(best_fit)

    selected = tuple(n for n, bit in zip(pool, best_mask) if bit)
    return GAResult(
        mask=best_mask,
        selected=selected,
        fitness=best_fit,
        trace=tuple(trace),
        train_captures=train_caps,
        val_captures=val_caps,
        evaluations=evaluations,
    )


@dataclass
class AuditRow:
    feature: str
    cv_f1: float
    isolated_f1: float


@dataclass
class AuditReport:
    baseline_cv: float
    baseline_isolated: float
    rows: list[AuditRow]
    folds: int
    ratio: float


SESSION_FIELDS = ("ip_id", "tcp_seq", "tcp_ack", "src_port", "dst_port")


def session_fields_from_frame(data: bytes, link_type: int = LINKTYPE_ETHERNET) -> dict[str, float]:
    """Raw session-identifying header values of one frame, -1 when absent.

    Deliberately separate from the main decoder: these values exist only
    to measure leakage, never to feed the catalogue.
    """
    out = {name: -1.0 for name in SESSION_FIELDS}
    if link_type != LINKTYPE_ETHERNET or len(data) < 34:
        return out
    if struct.unpack(">H", data[12:14])[0] != 0x0800:
        return out
    ihl = data[14] & 0x0F
    if (data[14] >> 4) != 4 or ihl < 5 or len(data) < 14 + ihl * 4:
        return out
    out["ip_id"] = float(struct.unpack(">H", data[18:20])[0])
    proto = data[23]
    off = 14 + ihl * 4
    rest = data[off:]
    if proto == 6 and len(rest) >= 20:
        sport, dport, seq, ack = struct.unpack(">HHII", rest[:12])
        out["src_port"], out["dst_port"] = float(sport), float(dport)
        out["tcp_seq"], out["tcp_ack"] = float(seq), float(ack)
    elif proto == 17 and len(rest) >= 8:
        sport, dport = struct.unpack(">HH", rest[:4])
        out["src_port"], out["dst_port"] = float(sport), float(dport)
    return out


def audit_session_features(
    records: Sequence[PacketRecord],
    session_columns: Mapping[str, Sequence[float]],
    catalogue: FeatureCatalogue,
    folds: int = 5,
    ratio: float = 0.75,
    seed: int = 0,
    hp: Optional[tree.Hyperparams] = None,
) -> AuditReport:
    """Baseline vs baseline+feature macro-F1 under CV and isolated splits.

    Cross-validation folds ignore capture boundaries on purpose; the
    isolated split assigns whole captures to train or test. A feature that
    scores well under CV but not isolation identifies sessions, not
    devices.
    """
    if any(r.label is None for r in records):
        raise DegenerateDataError("unlabeled records in audit input")
    labels = sorted({r.label for r in records})
    if len(labels) < 2:
        raise DegenerateDataError("need at least 2 classes")
    for name, col in session_columns.items():
        if len(col) != len(records):
            raise ValueError(f"session column {name!r} misaligned with records")
    encoders = tree.build_encoders(records, catalogue)
    X_base = tree.design_matrix(records, catalogue, encoders)
    code = {lab: i for i, lab in enumerate(labels)}
    y = np.array([code[r.label] for r in records], dtype=np.int64)
    n_classes = len(labels)
    hp = hp or tree.Hyperparams()

    n = len(records)
    order = list(range(n))
    random.Random(f"{seed}:cv").shuffle(order)
    cv_folds = [np.array(sorted(c), dtype=np.intp) for c in np.array_split(order, folds)]
    iso_train, iso_test, _, _ = _holdout_by_capture(records, 1.0 - ratio, seed)

    def cv_score(X: np.ndarray) -> float:
        scores = []
        for k in range(folds):
            test = cv_folds[k]
            train = np.concatenate([cv_folds[i] for i in range(folds) if i != k])
            if len(np.unique(y[train])) < 2:
                continue
            preds = _fit_predict(
                np.ascontiguousarray(X[train]), y[train],
                np.ascontiguousarray(X[test]), n_classes, hp,
            )
            scores.append(_macro_f1_codes(y[test], preds))
        return sum(scores) / len(scores) if scores else 0.0

    def iso_score(X: np.ndarray) -> float:
        if len(np.unique(y[iso_train])) < 2:
            return 0.0
        preds = _fit_predict(
            np.ascontiguousarray(X[iso_train]), y[iso_train],
            np.ascontiguousarray(X[iso_test]), n_classes, hp,
        )
        return _macro_f1_codes(y[iso_test], preds)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingleClassWarning)
        baseline_cv = cv_score(X_base)
        baseline_iso = iso_score(X_base)
        rows = []
        for name in sorted(session_columns):
            col = np.asarray(session_columns[name], dtype=np.float64).reshape(-1, 1)
            X_aug = np.ascontiguousarray(np.hstack([X_base, col]))
            rows.append(
                AuditRow(feature=name, cv_f1=cv_score(X_aug), isolated_f1=iso_score(X_aug))
            )
    return AuditReport(
        baseline_cv=baseline_cv,
        baseline_isolated=baseline_iso,
        rows=rows,
        folds=folds,
        ratio=ratio,
    )


def write_vote_report(report: VoteReport, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", *report.techniques, "votes"])
        for i, name in enumerate(report.feature_names):
            writer.writerow(
                [name]
                + [repr(report.scores[t][i]) for t in report.techniques]
                + [report.votes[i]]
            )


def write_mask(names: Sequence[str], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in names:
            fh.write(name + "\n")


def load_mask(path: Union[str, Path]) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip() and not line.startswith("#")]


def write_audit_report(report: AuditReport, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "cv_f1", "isolated_f1"])
        writer.writerow(["baseline", repr(report.baseline_cv), repr(report.baseline_isolated)])
        for row in report.rows:
            writer.writerow([row.feature, repr(row.cv_f1), repr(row.isolated_f1)])
