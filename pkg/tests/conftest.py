"""Shared helpers for building synthetic records and catalogues."""

from __future__ import annotations

import numpy as np
import pytest

from iotident.dataset import PacketRecord
from iotident.features import CatalogueEntry, FeatureCatalogue


def numeric_catalogue(n_features: int, version: str = "test-v1") -> FeatureCatalogue:
    """Catalogue of n purely numeric features for synthetic ML data.

    Rule ids are real (so validation passes) but tests fill feature values
    directly; rules are never run.
    """
    entries = tuple(
        CatalogueEntry(name=f"feat{j:02d}", kind="numeric", rule_id="ip.ttl")
        for j in range(n_features)
    )
    return FeatureCatalogue(version=version, entries=entries)


def make_records(X, labels, capture_ids=None, macs=None) -> list[PacketRecord]:
    """Wrap a feature matrix into PacketRecords."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if capture_ids is None:
        capture_ids = [f"cap-{i % 8}" for i in range(n)]
    if macs is None:
        macs = [f"02:00:00:00:00:{i % 16:02x}" for i in range(n)]
    return [
        PacketRecord(
            src_mac=macs[i],
            label=None if labels[i] is None else str(labels[i]),
            transfer=False,
            capture_id=str(capture_ids[i]),
            index=i,
            features=tuple(float(v) for v in X[i]),
        )
        for i in range(n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
