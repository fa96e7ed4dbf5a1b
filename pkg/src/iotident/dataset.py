"""Labeled dataset assembly: MAC labeling, capture-isolated splits, CSV IO.

Entire capture files go to either train or test, never both, so no
session ever spans the two partitions.
"""

from __future__ import annotations

import csv
import math
import random
import re
import warnings
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path, PurePosixPath
from typing import Iterable, Mapping, Optional, Sequence, Union

from .errors import (
    AliasMapError,
    InsufficientFilesError,
    LabelMapError,
    SchemaMismatchError,
    SingleFileDeviceWarning,
)
from .features import FeatureCatalogue, FeatureVector

_MAC_RE = re.compile(r"^[0-9a-f]{2}(:[0-9a-f]{2}){5}$")

META_COLUMNS = ("mac", "label", "transfer", "capture_id", "index")


def normalize_mac(mac: str) -> str:
    """Lowercase colon-separated MAC; raises LabelMapError on bad format."""
    m = mac.strip().lower().replace("-", ":")
    if not _MAC_RE.match(m):
        raise LabelMapError(f"bad MAC address {mac!r}")
    return m


@dataclass(frozen=True)
class LabelMap:
    """MAC address -> device label, with shared-address bookkeeping."""

    entries: Mapping[str, str]
    shared_macs: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.entries:
            raise LabelMapError("label map is empty")
        unknown = self.shared_macs - set(self.entries)
        if unknown:
            raise LabelMapError(f"shared MACs missing from entries: {sorted(unknown)}")


@dataclass(frozen=True)
class PacketRecord:
    """One packet: identity context, optional ground truth, features."""

    src_mac: Optional[str]
    label: Optional[str]
    transfer: bool
    capture_id: str
    index: int
    features: FeatureVector


@dataclass(frozen=True)
class SplitPlan:
    train_files: tuple[str, ...]
    test_files: tuple[str, ...]
    seed: int
    ratio: float

    def __post_init__(self):
        overlap = set(self.train_files) & set(self.test_files)
        if overlap:
            raise InsufficientFilesError(f"files in both partitions: {sorted(overlap)}")


_TRUTHY = {"1", "true", "yes", "transfer"}


def load_label_map(path: Union[str, Path]) -> LabelMap:
    """Load `mac,label[,transfer]` lines; `#` comments and blanks skipped."""
    entries: dict[str, str] = {}
    shared: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (2, 3):
                raise LabelMapError(f"{path}:{lineno}: expected `mac,label[,transfer]`")
            mac = normalize_mac(parts[0])
            label = parts[1]
            if not label:
                raise LabelMapError(f"{path}:{lineno}: empty label")
            if mac in entries and entries[mac] != label:
                raise LabelMapError(f"{path}:{lineno}: conflicting labels for {mac}")
            entries[mac] = label
            if len(parts) == 3 and parts[2].lower() in _TRUTHY:
                shared.add(mac)
    return LabelMap(entries=entries, shared_macs=frozenset(shared))


def packaged_label_map(name: str) -> LabelMap:
    """Load one of the shipped maps ("aalto" or "unsw")."""
    fname = {"aalto": "aalto_labels.csv", "unsw": "unsw_labels.csv"}[name]
    with resources.as_file(resources.files("iotident.data").joinpath(fname)) as p:
        return load_label_map(p)


def assign_labels(
    records: Sequence[PacketRecord], label_map: LabelMap
) -> tuple[list[PacketRecord], int]:
    """Label records by source MAC; returns (records, unlabeled count).

    Records whose MAC is in the shared set are flagged transfer=True.
    Idempotent and order-independent.
    """
    out = []
    unlabeled = 0
    for rec in records:
        label = label_map.entries.get(rec.src_mac) if rec.src_mac else None
        if label is None:
            unlabeled += 1
            out.append(replace(rec, label=None, transfer=False))
        else:
            out.append(
                replace(rec, label=label, transfer=rec.src_mac in label_map.shared_macs)
            )
    return out, unlabeled


def default_device_key(capture_id: str) -> str:
    """Device grouping key for a capture id.

    Uses the parent directory name when the id carries one (the Aalto
    layout keeps one directory per device); otherwise strips a trailing
    `-N`/`_N` session counter from the file stem.
    """
    p = PurePosixPath(str(capture_id).replace("\\", "/"))
    if p.parent.name:
        return p.parent.name
    stem = p.stem
    m = re.match(r"^(.*?)[-_]\d+$", stem)
    return m.group(1) if m else stem


def split_by_capture(
    files: Iterable[str],
    ratio: float,
    seed: int,
    device_of=default_device_key,
) -> SplitPlan:
    """Assign whole capture files to train/test, stratified per device.

    Each device group sends ceil(ratio*n) files to train. A single-file
    device goes entirely to train with a warning. Deterministic given seed.
    """
    files = [str(f) for f in files]
    if len(set(files)) != len(files):
        raise InsufficientFilesError("duplicate capture ids in input")
    if len(files) < 2:
        raise InsufficientFilesError(f"need at least 2 capture files, got {len(files)}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    groups: dict[str, list[str]] = {}
    for f in files:
        groups.setdefault(device_of(f), []).append(f)
    train: list[str] = []
    test: list[str] = []
    for device in sorted(groups):
        members = sorted(groups[device])
        if len(members) == 1:
            warnings.warn(
                f"device {device!r} has a single capture file; assigned to train",
                SingleFileDeviceWarning,
                stacklevel=2,
            )
            train += members
            continue
        rng = random.Random(f"{seed}:{device}")
        rng.shuffle(members)
        k = math.ceil(ratio * len(members))
        train += members[:k]
        test += members[k:]
    return SplitPlan(
        train_files=tuple(sorted(train)),
        test_files=tuple(sorted(test)),
        seed=seed,
        ratio=ratio,
    )


def load_alias_map(path: Union[str, Path]) -> dict[str, str]:
    """Load `old_label,new_label` lines; chains (A->B, B->C) are rejected."""
    alias: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not all(parts):
                raise AliasMapError(f"{path}:{lineno}: expected `old_label,new_label`")
            if parts[0] in alias:
                raise AliasMapError(f"{path}:{lineno}: duplicate source label {parts[0]!r}")
            alias[parts[0]] = parts[1]
    _check_alias_chains(alias)
    return alias


def _check_alias_chains(alias_map: Mapping[str, str]) -> None:
    chained = set(alias_map) & set(alias_map.values())
    if chained:
        raise AliasMapError(f"alias map chains through: {sorted(chained)}")


def merge_labels(
    records: Sequence[PacketRecord], alias_map: Mapping[str, str]
) -> list[PacketRecord]:
    """Replace labels by their merged-group labels; single-step only."""
    _check_alias_chains(alias_map)
    out = []
    for rec in records:
        if rec.label is not None and rec.label in alias_map:
            out.append(replace(rec, label=alias_map[rec.label]))
        else:
            out.append(rec)
    return out


def cap_per_class(
    records: Sequence[PacketRecord], cap: int, seed: int
) -> list[PacketRecord]:
    """Uniformly subsample each label to at most `cap` records, seeded.

    Unlabeled records are kept unconditionally. Original order preserved.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    by_label: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        if rec.label is not None:
            by_label.setdefault(rec.label, []).append(i)
    keep = set(range(len(records)))
    for label in sorted(by_label):
        idxs = by_label[label]
        if len(idxs) > cap:
            rng = random.Random(f"{seed}:{label}")
            kept = set(rng.sample(idxs, cap))
            keep -= set(idxs) - kept
    return [records[i] for i in sorted(keep)]


def _format_value(value, kind: str) -> str:
    if kind == "numeric":
        return repr(float(value))
    if kind == "boolean":
        return "1" if value else "0"
    return str(value)


def _parse_value(cell: str, kind: str):
    if kind == "numeric":
        return float(cell)
    if kind == "boolean":
        return cell == "1"
    return cell


def write_dataset(
    records: Sequence[PacketRecord], path: Union[str, Path], catalogue: FeatureCatalogue
) -> None:
    """Write records as CSV: mac,label,transfer,capture_id,index,<features>."""
    kinds = catalogue.kinds
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(META_COLUMNS) + list(catalogue.names))
        for rec in records:
            if len(rec.features) != len(catalogue):
                raise SchemaMismatchError(
                    f"record has {len(rec.features)} features, catalogue {len(catalogue)}"
                )
            writer.writerow(
                [
                    rec.src_mac or "",
                    rec.label or "",
                    "1" if rec.transfer else "0",
                    rec.capture_id,
                    rec.index,
                ]
                + [_format_value(v, k) for v, k in zip(rec.features, kinds)]
            )


def read_dataset_meta(path: Union[str, Path]) -> list[dict]:
    """Read only the identity columns of a dataset CSV.

    Returns dicts with mac, label, transfer, capture_id, index. Works with
    any catalogue since feature cells are not parsed.
    """
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:5]) != META_COLUMNS:
            raise SchemaMismatchError(f"{path}: not a dataset CSV (header {header})")
        for row in reader:
            out.append(
                {
                    "mac": row[0] or None,
                    "label": row[1] or None,
                    "transfer": row[2] == "1",
                    "capture_id": row[3],
                    "index": int(row[4]),
                }
            )
    return out


def read_dataset(path: Union[str, Path], catalogue: FeatureCatalogue) -> list[PacketRecord]:
    """Read a dataset CSV back; header must match the active catalogue."""
    expected = list(META_COLUMNS) + list(catalogue.names)
    kinds = catalogue.kinds
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise SchemaMismatchError(
                f"{path}: header does not match catalogue "
                f"{catalogue.version!r} (got {header})"
            )
        for row in reader:
            if len(row) != len(expected):
                raise SchemaMismatchError(f"{path}: row of {len(row)} cells, expected {len(expected)}")
            mac, label, transfer, capture_id, index = row[:5]
            features = tuple(
                _parse_value(cell, kind) for cell, kind in zip(row[5:], kinds)
            )
            out.append(
                PacketRecord(
                    src_mac=mac or None,
                    label=label or None,
                    transfer=transfer == "1",
                    capture_id=capture_id,
                    index=int(index),
                    features=features,
                )
            )
    return out
