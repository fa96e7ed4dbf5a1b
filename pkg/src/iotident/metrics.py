"""Classification metrics: confusion matrix, macro P/R/F1, sweeps.

Macro averages are unweighted means over classes present in the truth;
the class-imbalance of device traffic makes weighted averages misleading.
Classes that appear only in predictions get matrix rows/columns but are
excluded from macro averaging and reported separately.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .aggregate import AggregationConfig, aggregate
from .errors import LengthMismatchError


@dataclass
class EvaluationReport:
    labels: tuple[str, ...]  # row/column order; rows are truth
    confusion: list[list[int]]
    per_class: dict[str, dict[str, float]]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    truth_classes: tuple[str, ...]
    predicted_only: tuple[str, ...]
    test_t: float = 0.0
    alg_t: float = 0.0

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": self.confusion,
            "per_class": self.per_class,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "truth_classes": list(self.truth_classes),
            "predicted_only": list(self.predicted_only),
            "test_t": self.test_t,
            "alg_t": self.alg_t,
        }


def evaluate(truth: Sequence[str], predicted: Sequence[str]) -> EvaluationReport:
    """Exact counts over the union label universe."""
    if len(truth) != len(predicted):
        raise LengthMismatchError(f"{len(truth)} truths vs {len(predicted)} predictions")
    if len(truth) == 0:
        raise LengthMismatchError("nothing to evaluate")
    labels = tuple(sorted(set(truth) | set(predicted)))
    index = {lab: i for i, lab in enumerate(labels)}
    size = len(labels)
    confusion = [[0] * size for _ in range(size)]
    for t, p in zip(truth, predicted):
        confusion[index[t]][index[p]] += 1
    col_sums = [sum(confusion[i][j] for i in range(size)) for j in range(size)]
    per_class: dict[str, dict[str, float]] = {}
    truth_classes = []
    macro_p = macro_r = macro_f = 0.0
    correct = 0
    for i, lab in enumerate(labels):
        tp = confusion[i][i]
        support = sum(confusion[i])
        correct += tp
        precision = tp / col_sums[i] if col_sums[i] else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[lab] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": float(support),
        }
        if support:
            truth_classes.append(lab)
            macro_p += precision
            macro_r += recall
            macro_f += f1
    n_truth = len(truth_classes)
    return EvaluationReport(
        labels=labels,
        confusion=confusion,
        per_class=per_class,
        macro_precision=macro_p / n_truth,
        macro_recall=macro_r / n_truth,
        macro_f1=macro_f / n_truth,
        accuracy=correct / len(truth),
        truth_classes=tuple(truth_classes),
        predicted_only=tuple(lab for lab in labels if lab not in set(truth_classes)),
    )


def evaluate_by_device(
    truth: Sequence[str],
    predictions: Union[Sequence[str], Mapping[str, Sequence[str]]],
    macs: Optional[Sequence[str]] = None,
) -> list[dict]:
    """Per-device table: support, dataset share, F1 per method.

    predictions may be a single sequence or a mapping method -> sequence.
    When MACs are supplied, a distinct-MAC count per device is included.
    """
    if not isinstance(predictions, Mapping):
        predictions = {"individual": predictions}
    reports = {}
    for method, preds in predictions.items():
        reports[method] = evaluate(truth, preds)
    if macs is not None and len(macs) != len(truth):
        raise LengthMismatchError(f"{len(macs)} MACs vs {len(truth)} truths")
    total = len(truth)
    devices = sorted(set(truth))
    rows = []
    for device in devices:
        support = sum(1 for t in truth if t == device)
        row: dict = {
            "device": device,
            "packets": support,
            "percent": 100.0 * support / total,
        }
        if macs is not None:
            row["n_macs"] = len({m for m, t in zip(macs, truth) if t == device})
        for method, report in reports.items():
            row[f"f1_{method}"] = report.per_class[device]["f1"]
        rows.append(row)
    return rows


def sweep_group_size(
    macs: Sequence[str],
    predicted: Sequence[str],
    truth: Sequence[str],
    g_values: Sequence[int],
    cfg: Optional[AggregationConfig] = None,
) -> list[dict]:
    """Aggregate then evaluate for each group size; rows for plotting."""
    if not (len(macs) == len(predicted) == len(truth)):
        raise LengthMismatchError("macs, predictions and truth must align")
    base = cfg if cfg is not None else AggregationConfig()
    rows = []
    for g in g_values:
        result = aggregate(macs, predicted, replace(base, group_size=g))
        report = evaluate(truth, result.new_labels)
        rows.append({"g": int(g), "accuracy": report.accuracy, "macro_f1": report.macro_f1})
    return rows


def write_report(report: EvaluationReport, path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_device_table(rows: Sequence[dict], path: Union[str, Path]) -> None:
    if not rows:
        raise ValueError("empty device table")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_sweep(rows: Sequence[dict], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["g", "accuracy", "macro_f1"])
        for row in rows:
            writer.writerow([row["g"], repr(row["accuracy"]), repr(row["macro_f1"])])
