"""Group-mode relabeling of per-packet predictions, per source MAC.

Packets are grouped by MAC in arrival order and cut into consecutive
chunks of g; every packet in a chunk takes the chunk's modal label. MACs
whose chunk modes show no single dominant label land on an exception
list; the mixed method keeps their individual labels and uses aggregated
labels everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import LengthMismatchError


@dataclass(frozen=True)
class AggregationConfig:
    group_size: int = 13
    tie_rule: str = "first-seen-in-group"
    tail_rule: str = "process-as-smaller-group"
    dominance_threshold: float = 0.5

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.tie_rule != "first-seen-in-group":
            raise ValueError(f"unsupported tie_rule {self.tie_rule!r}")
        if self.tail_rule != "process-as-smaller-group":
            raise ValueError(f"unsupported tail_rule {self.tail_rule!r}")
        if not 0.0 < self.dominance_threshold <= 1.0:
            raise ValueError("dominance_threshold must be in (0, 1]")


@dataclass
class AggregationResult:
    """Relabeled stream plus per-MAC chunk modes.

    group_modes maps each MAC to (start, stop, mode) triples, where start
    and stop index the MAC's own packet subsequence (half-open).
    """

    new_labels: list[str]
    group_modes: dict[str, list[tuple[int, int, str]]]
    exceptions: frozenset[str]
    macs: tuple[str, ...]


def _chunk_mode(labels: Sequence[str]) -> str:
    # ties go to the earliest-appearing label in the chunk
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    best = None
    best_count = -1
    for lab, c in counts.items():
        if c > best_count:
            best, best_count = lab, c
    assert best is not None
    return best


def aggregate(
    macs: Sequence[str], labels: Sequence[str], cfg: AggregationConfig
) -> AggregationResult:
    """Relabel fixed-size same-MAC groups with their modal label.

    The trailing partial group of each MAC is processed as a smaller
    chunk, so every packet receives an aggregated label.
    """
    if len(macs) != len(labels):
        raise LengthMismatchError(f"{len(macs)} MACs vs {len(labels)} labels")
    if len(macs) == 0:
        raise LengthMismatchError("empty input")
    by_mac: dict[str, list[int]] = {}
    for i, mac in enumerate(macs):
        by_mac.setdefault(mac, []).append(i)
    new_labels = list(labels)
    group_modes: dict[str, list[tuple[int, int, str]]] = {}
    g = cfg.group_size
    for mac, idxs in by_mac.items():
        modes = []
        for start in range(0, len(idxs), g):
            chunk = idxs[start : start + g]
            mode = _chunk_mode([labels[i] for i in chunk])
            for i in chunk:
                new_labels[i] = mode
            modes.append((start, start + len(chunk), mode))
        group_modes[mac] = modes
    result = AggregationResult(
        new_labels=new_labels,
        group_modes=group_modes,
        exceptions=frozenset(),
        macs=tuple(macs),
    )
    result.exceptions = detect_exceptions(result, cfg)
    return result


def detect_exceptions(result: AggregationResult, cfg: AggregationConfig) -> frozenset[str]:
    """MACs whose chunk modes disagree with no dominant label.

    A MAC is exceptional iff its modes contain >= 2 distinct labels and no
    label accounts for more than dominance_threshold of its chunks.
    """
    out = set()
    for mac, modes in result.group_modes.items():
        mode_labels = [m for _, _, m in modes]
        if len(set(mode_labels)) < 2:
            continue
        counts: dict[str, int] = {}
        for lab in mode_labels:
            counts[lab] = counts.get(lab, 0) + 1
        top = max(counts.values())
        if top <= cfg.dominance_threshold * len(mode_labels):
            out.add(mac)
    return frozenset(out)


def mixed(
    labels: Sequence[str], result: AggregationResult, cfg: AggregationConfig
) -> list[str]:
    """Individual labels for exception-listed MACs, aggregated elsewhere."""
    if len(labels) != len(result.new_labels):
        raise LengthMismatchError(
            f"{len(labels)} labels vs {len(result.new_labels)} aggregated"
        )
    exceptions = detect_exceptions(result, cfg)
    return [
        labels[i] if result.macs[i] in exceptions else result.new_labels[i]
        for i in range(len(labels))
    ]
