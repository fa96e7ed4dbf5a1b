"""Command-line front end wiring the pipeline together.

Subcommands: extract, split, train, tune, predict, evaluate,
select-features, sweep-group-size, audit-leakage. Every run writes a
manifest next to its primary output (inputs, seed, catalogue version,
wall times). All stages are deterministic under --seed; manifests are the
only outputs carrying timestamps.

Environment overrides: IOTIDENT_SEED sets the default --seed,
IOTIDENT_OUT prefixes relative output paths.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .aggregate import AggregationConfig, aggregate, mixed
from .dataset import (
    PacketRecord,
    assign_labels,
    cap_per_class,
    load_alias_map,
    load_label_map,
    merge_labels,
    read_dataset,
    read_dataset_meta,
    split_by_capture,
    write_dataset,
)
from .decode import decode_layers
from .errors import IotIdentError, LengthMismatchError, SchemaMismatchError
from .features import default_catalogue, extract_features, load_catalogue
from .metrics import (
    evaluate,
    evaluate_by_device,
    sweep_group_size,
    write_device_table,
    write_report,
    write_sweep,
)
from .pcapio import read_capture
from .select import (
    GAConfig,
    SESSION_FIELDS,
    audit_session_features,
    ga_select,
    score_features,
    session_fields_from_frame,
    vote_filter,
    write_audit_report,
    write_mask,
    write_vote_report,
)
from .tree import (
    Hyperparams,
    load_model,
    predict_records,
    save_model,
    train_tree,
    tune,
)

METHODS = ("individual", "aggregated", "mixed")

PREDICTION_COLUMNS = ("mac", "capture_id", "index", "label", "confidence")


def _env_seed() -> int:
    raw = os.environ.get("IOTIDENT_SEED", "")
    return int(raw) if raw else 0


def _out_path(path: str) -> Path:
    base = os.environ.get("IOTIDENT_OUT", "")
    p = Path(path)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load_catalogue(path: str | None):
    return load_catalogue(path) if path else default_catalogue()


def _write_manifest(out: Path, command: str, args: argparse.Namespace,
                    inputs: list[str], outputs: list[str], started: float,
                    catalogue_version: str | None = None, **extra) -> None:
    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "seed": getattr(args, "seed", None),
        "catalogue_version": catalogue_version,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": time.perf_counter() - started,
    }
    doc.update(extra)
    manifest = out.with_name(out.name + ".manifest.json")
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _collect_pcaps(args: argparse.Namespace) -> list[tuple[Path, str]]:
    """(path, capture_id) pairs; ids are dir-relative when --pcap-dir set."""
    pairs: list[tuple[Path, str]] = []
    if args.pcap_dir:
        root = Path(args.pcap_dir)
        for p in sorted(root.rglob("*.pcap")):
            pairs.append((p, p.relative_to(root).as_posix()))
    for raw in args.pcap or []:
        p = Path(raw)
        pairs.append((p, p.name))
    if not pairs:
        raise IotIdentError("no capture files given (use --pcap or --pcap-dir)")
    return pairs


def _write_predictions(path: Path, meta: list[dict], labels: list[str], conf) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PREDICTION_COLUMNS)
        for row, label, c in zip(meta, labels, conf):
            writer.writerow(
                [row["mac"] or "", row["capture_id"], row["index"], label, repr(float(c))]
            )


def _read_predictions(path: Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PREDICTION_COLUMNS:
            raise SchemaMismatchError(f"{path}: not a predictions CSV (header {header})")
        for row in reader:
            out.append(
                {
                    "mac": row[0] or None,
                    "capture_id": row[1],
                    "index": int(row[2]),
                    "label": row[3],
                    "confidence": float(row[4]),
                }
            )
    return out


def _join_truth(truth_meta: list[dict], pred_rows: list[dict]) -> list[tuple[dict, dict]]:
    """Pair prediction rows with truth rows by (capture_id, index)."""
    by_key = {(t["capture_id"], t["index"]): t for t in truth_meta}
    if len(by_key) != len(truth_meta):
        raise LengthMismatchError("duplicate (capture_id, index) in truth rows")
    pairs = []
    for p in pred_rows:
        t = by_key.get((p["capture_id"], p["index"]))
        if t is None:
            raise LengthMismatchError(
                f"no truth row for prediction {p['capture_id']}:{p['index']}"
            )
        pairs.append((t, p))
    return pairs


def cmd_extract(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    pairs = _collect_pcaps(args)
    records: list[PacketRecord] = []
    session_rows: list[list] = []
    for path, cid in pairs:
        for pkt in read_capture(path, capture_id=cid):
            stack = decode_layers(pkt)
            fv = extract_features(stack, catalogue)
            mac = stack.ethernet.src_mac if stack.ethernet else None
            records.append(
                PacketRecord(
                    src_mac=mac, label=None, transfer=False,
                    capture_id=cid, index=pkt.index, features=fv,
                )
            )
            if args.session_out:
                fields = session_fields_from_frame(pkt.data, pkt.link_type)
                session_rows.append(
                    [cid, pkt.index] + [repr(fields[k]) for k in SESSION_FIELDS]
                )
    unlabeled = 0
    if args.label_map:
        records, unlabeled = assign_labels(records, load_label_map(args.label_map))
    if args.merge_labels:
        records = merge_labels(records, load_alias_map(args.merge_labels))
    if args.cap_per_class:
        if args.session_out:
            raise IotIdentError("--cap-per-class cannot be combined with --session-out")
        records = cap_per_class(records, args.cap_per_class, args.seed)
    out = _out_path(args.out)
    write_dataset(records, out, catalogue)
    outputs = [str(out)]
    if args.session_out:
        sess = _out_path(args.session_out)
        with open(sess, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["capture_id", "index", *SESSION_FIELDS])
            writer.writerows(session_rows)
        outputs.append(str(sess))
    _write_manifest(
        out, "extract", args, [str(p) for p, _ in pairs], outputs, started,
        catalogue_version=catalogue.version, packets=len(records), unlabeled=unlabeled,
    )
    print(f"extracted {len(records)} packets from {len(pairs)} captures -> {out}")
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.dataset:
        meta = read_dataset_meta(args.dataset)
        files = sorted({row["capture_id"] for row in meta})
        inputs = [args.dataset]
    else:
        pairs = _collect_pcaps(args)
        files = [cid for _, cid in pairs]
        inputs = [str(p) for p, _ in pairs]
    plan = split_by_capture(files, args.ratio, args.seed)
    out = _out_path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "train_files": list(plan.train_files),
                "test_files": list(plan.test_files),
                "seed": plan.seed,
                "ratio": plan.ratio,
            },
            fh, sort_keys=True, indent=1,
        )
        fh.write("\n")
    _write_manifest(out, "split", args, inputs, [str(out)], started)
    print(f"{len(plan.train_files)} train / {len(plan.test_files)} test captures -> {out}")
    return 0


def _load_plan_filter(path: str | None, partition: str) -> set[str] | None:
    if not path:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        plan = json.load(fh)
    return set(plan[f"{partition}_files"])


def _apply_mask(records, catalogue, mask_path):
    """Project records and catalogue onto the masked feature subset."""
    from .features import FeatureCatalogue
    from .select import load_mask

    keep = set(load_mask(mask_path))
    keep_idx = [j for j, e in enumerate(catalogue.entries) if e.name in keep]
    if not keep_idx:
        raise IotIdentError(f"mask {mask_path} matches no catalogue feature")
    masked = FeatureCatalogue(
        version=f"{catalogue.version}+mask",
        entries=tuple(catalogue.entries[j] for j in keep_idx),
    )
    projected = [
        replace(r, features=tuple(r.features[j] for j in keep_idx)) for r in records
    ]
    return projected, masked


def cmd_train(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    records = read_dataset(args.dataset, catalogue)
    keep = _load_plan_filter(args.split, "train")
    if keep is not None:
        records = [r for r in records if r.capture_id in keep]
    records = [r for r in records if r.label is not None]
    if args.mask:
        records, catalogue = _apply_mask(records, catalogue, args.mask)
    hp = Hyperparams(
        max_depth=args.max_depth,
        min_samples_split=args.min_samples_split,
        min_samples_leaf=args.min_samples_leaf,
        seed=args.seed,
    )
    model = train_tree(records, hp, catalogue)
    out = _out_path(args.out)
    save_model(model, out)
    _write_manifest(
        out, "train", args, [args.dataset], [str(out)], started,
        catalogue_version=catalogue.version,
        records=len(records), leaves=model.n_leaves(), depth=model.depth(),
    )
    print(f"trained on {len(records)} packets, {model.n_leaves()} leaves -> {out}")
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    records = [r for r in read_dataset(args.dataset, catalogue) if r.label is not None]
    keep = _load_plan_filter(args.split, "train")
    if keep is not None:
        records = [r for r in records if r.capture_id in keep]
    result = tune(records, catalogue, folds=args.folds, iters=args.iters, seed=args.seed)
    out = _out_path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "max_depth": result.best.max_depth,
                "min_samples_split": result.best.min_samples_split,
                "min_samples_leaf": result.best.min_samples_leaf,
                "seed": result.best.seed,
            },
            fh, sort_keys=True, indent=1,
        )
        fh.write("\n")
    outputs = [str(out)]
    if args.trials_out:
        trials = _out_path(args.trials_out)
        with open(trials, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["max_depth", "min_samples_split", "min_samples_leaf",
                             "mean_macro_f1", "fold_scores"])
            for t in result.trials:
                writer.writerow(
                    [t.params.get("max_depth"), t.params.get("min_samples_split"),
                     t.params.get("min_samples_leaf"), repr(t.mean_score),
                     " ".join(repr(s) for s in t.fold_scores)]
                )
        outputs.append(str(trials))
    _write_manifest(out, "tune", args, [args.dataset], outputs, started,
                    catalogue_version=catalogue.version, trials=len(result.trials))
    print(f"best config -> {out}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    records = read_dataset(args.dataset, catalogue)
    keep = _load_plan_filter(args.split, "test")
    if keep is not None:
        records = [r for r in records if r.capture_id in keep]
    model = load_model(args.model, expect_catalogue_version=catalogue.version)
    t0 = time.perf_counter()
    labels, conf = predict_records(model, records, catalogue)
    test_t = time.perf_counter() - t0
    alg_t = 0.0
    if args.method in ("aggregated", "mixed"):
        macs = [r.src_mac or "" for r in records]
        cfg = AggregationConfig(
            group_size=args.group_size, dominance_threshold=args.dominance
        )
        t0 = time.perf_counter()
        result = aggregate(macs, labels, cfg)
        labels = mixed(labels, result, cfg) if args.method == "mixed" else result.new_labels
        alg_t = time.perf_counter() - t0
    meta = [
        {"mac": r.src_mac, "capture_id": r.capture_id, "index": r.index} for r in records
    ]
    out = _out_path(args.out)
    _write_predictions(out, meta, labels, conf)
    _write_manifest(
        out, "predict", args, [args.dataset, args.model], [str(out)], started,
        catalogue_version=catalogue.version,
        method=args.method, test_t=test_t, alg_t=alg_t, packets=len(records),
    )
    print(f"{args.method} predictions for {len(records)} packets -> {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    truth_meta = read_dataset_meta(args.truth)
    pred_rows = _read_predictions(args.pred)
    joined = [
        (t, p) for t, p in _join_truth(truth_meta, pred_rows) if t["label"] is not None
    ]
    if not joined:
        raise LengthMismatchError("no labeled truth rows to evaluate")
    truth = [t["label"] for t, _ in joined]
    preds = [p["label"] for _, p in joined]
    report = evaluate(truth, preds)
    report.test_t = args.test_time
    report.alg_t = args.alg_time
    out = _out_path(args.out)
    write_report(report, out)
    outputs = [str(out)]
    if args.per_device_out:
        labeled_macs = [t["mac"] or "" for t, _ in joined]
        table = evaluate_by_device(truth, {args.method: preds}, macs=labeled_macs)
        dev = _out_path(args.per_device_out)
        write_device_table(table, dev)
        outputs.append(str(dev))
    _write_manifest(out, "evaluate", args, [args.truth, args.pred], outputs, started,
                    method=args.method)
    print(
        f"method={args.method} accuracy={report.accuracy:.4f} "
        f"macro_f1={report.macro_f1:.4f} -> {out}"
    )
    return 0


def cmd_select_features(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    records = [r for r in read_dataset(args.dataset, catalogue) if r.label is not None]
    report = score_features(records, catalogue, seed=args.seed, per_class=args.per_class)
    votes_out = _out_path(args.votes_out)
    write_vote_report(report, votes_out)
    retained, removed = vote_filter(report, min_votes=args.min_votes)
    outputs = [str(votes_out)]
    extra: dict = {"retained": len(retained), "removed": len(removed)}
    if args.ga:
        cfg = GAConfig(
            population=args.population,
            generations=args.generations,
            crossover_rate=args.crossover_rate,
            mutation_rate=args.mutation_rate,
            tournament_k=args.tournament_k,
            seed=args.seed,
            holdout_ratio=args.holdout_ratio,
        )
        result = ga_select(records, retained, cfg, catalogue)
        retained = list(result.selected)
        extra["ga_fitness"] = result.fitness
        extra["ga_evaluations"] = result.evaluations
        if args.trace_out:
            trace_out = _out_path(args.trace_out)
            with open(trace_out, "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["generation", "best_fitness"])
                for gen, fit in enumerate(result.trace):
                    writer.writerow([gen, repr(fit)])
            outputs.append(str(trace_out))
    mask_out = _out_path(args.mask_out)
    write_mask(retained, mask_out)
    outputs.append(str(mask_out))
    _write_manifest(mask_out, "select-features", args, [args.dataset], outputs, started,
                    catalogue_version=catalogue.version, **extra)
    print(f"{len(retained)} features retained -> {mask_out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    truth_meta = read_dataset_meta(args.truth)
    pred_rows = _read_predictions(args.pred)
    joined = [
        (t, p) for t, p in _join_truth(truth_meta, pred_rows) if t["label"] is not None
    ]
    truth = [t["label"] for t, _ in joined]
    preds = [p["label"] for _, p in joined]
    macs = [t["mac"] or "" for t, _ in joined]
    g_values = sorted({int(v) for v in args.g_values.split(",")})
    rows = sweep_group_size(macs, preds, truth, g_values)
    out = _out_path(args.out)
    write_sweep(rows, out)
    _write_manifest(out, "sweep-group-size", args, [args.truth, args.pred],
                    [str(out)], started)
    print(f"swept g in {g_values} -> {out}")
    return 0


def cmd_audit(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    catalogue = _load_catalogue(args.catalogue)
    records = [r for r in read_dataset(args.dataset, catalogue) if r.label is not None]
    columns: dict[str, list[float]] = {name: [] for name in SESSION_FIELDS}
    with open(args.session, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["capture_id", "index", *SESSION_FIELDS]:
            raise SchemaMismatchError(f"{args.session}: not a session-feature CSV")
        by_key = {}
        for row in reader:
            by_key[(row[0], int(row[1]))] = [float(v) for v in row[2:]]
    for rec in records:
        values = by_key.get((rec.capture_id, rec.index))
        if values is None:
            raise LengthMismatchError(
                f"no session row for packet {rec.capture_id}:{rec.index}"
            )
        for name, v in zip(SESSION_FIELDS, values):
            columns[name].append(v)
    report = audit_session_features(
        records, columns, catalogue, folds=args.folds, ratio=args.ratio, seed=args.seed
    )
    out = _out_path(args.out)
    write_audit_report(report, out)
    _write_manifest(out, "audit-leakage", args, [args.dataset, args.session],
                    [str(out)], started, catalogue_version=catalogue.version)
    print(
        f"baseline cv={report.baseline_cv:.4f} isolated={report.baseline_isolated:.4f} "
        f"-> {out}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iotident",
        description="IoT device-type identification from individual packets",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=_env_seed(),
                       help="deterministic seed (env IOTIDENT_SEED)")

    p = sub.add_parser("extract", help="decode pcaps into a feature dataset CSV")
    p.add_argument("--pcap", nargs="*", help="individual capture files")
    p.add_argument("--pcap-dir", help="directory scanned recursively for *.pcap")
    p.add_argument("--label-map", help="mac,label[,transfer] CSV")
    p.add_argument("--merge-labels", help="old_label,new_label alias CSV")
    p.add_argument("--catalogue", help="catalogue definition file (default shipped)")
    p.add_argument("--cap-per-class", type=int, help="uniform per-label record cap")
    p.add_argument("--session-out", help="also write raw session fields CSV")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("split", help="capture-isolated train/test split plan")
    p.add_argument("--dataset", help="dataset CSV whose capture ids are split")
    p.add_argument("--pcap", nargs="*")
    p.add_argument("--pcap-dir")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the decision tree")
    p.add_argument("--dataset", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--split", help="split plan JSON; trains on its train files")
    p.add_argument("--mask", help="feature mask file restricting the catalogue")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-split", type=int, default=2)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="random search with capture-isolated CV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--split", help="split plan JSON; tunes on its train files")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--trials-out")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", help="score packets with a trained model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--split", help="split plan JSON; predicts on its test files")
    p.add_argument("--method", choices=METHODS, default="individual")
    p.add_argument("--group-size", type=int, default=13)
    p.add_argument("--dominance", type=float, default=0.5)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics report from truth + predictions")
    p.add_argument("--truth", required=True, help="dataset CSV with labels")
    p.add_argument("--pred", required=True, help="predictions CSV")
    p.add_argument("--method", choices=METHODS, default="individual")
    p.add_argument("--per-device-out", help="per-device F1 table CSV")
    p.add_argument("--test-time", type=float, default=0.0)
    p.add_argument("--alg-time", type=float, default=0.0)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-features", help="importance voting and GA search")
    p.add_argument("--dataset", required=True)
    p.add_argument("--catalogue")
    p.add_argument("--min-votes", type=int, default=1)
    p.add_argument("--per-class", action="store_true",
                   help="score one-vs-rest per device")
    p.add_argument("--ga", action="store_true", help="run the GA wrapper search")
    p.add_argument("--population", type=int, default=50)
    p.add_argument("--generations", type=int, default=30)
    p.add_argument("--crossover-rate", type=float, default=0.9)
    p.add_argument("--mutation-rate", type=float, default=None)
    p.add_argument("--tournament-k", type=int, default=3)
    p.add_argument("--holdout-ratio", type=float, default=0.25)
    p.add_argument("--votes-out", required=True)
    p.add_argument("--trace-out")
    p.add_argument("--mask-out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("sweep-group-size", help="accuracy/macro-F1 per group size")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--g-values", default="1,2,3,5,8,13,21,30")
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("audit-leakage", help="session-feature leakage report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--session", required=True, help="session fields CSV from extract")
    p.add_argument("--catalogue")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--out", required=True)
    add_seed(p)
    p.set_defaults(func=cmd_audit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IotIdentError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
