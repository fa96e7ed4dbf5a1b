"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy
fallback. Set IOTIDENT_PURE_PY=1 before import to force the fallback.
Both backends produce identical split decisions (integer count math), so
trained trees do not depend on the backend.
"""

from __future__ import annotations

import os

from . import _kernels_py

_impl = _kernels_py
if os.environ.get("IOTIDENT_PURE_PY", "") in ("", "0"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        pass


def use_backend(name: str) -> None:
    """Switch the active backend ("cython" or "python") at runtime."""
    global _impl, shannon_entropy, best_split_on_feature, tree_apply, BACKEND
    if name == "python":
        _impl = _kernels_py
    elif name == "cython":
        from . import _kernels

        _impl = _kernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    shannon_entropy = _impl.shannon_entropy
    best_split_on_feature = _impl.best_split_on_feature
    tree_apply = _impl.tree_apply
    BACKEND = _impl.BACKEND


shannon_entropy = _impl.shannon_entropy
best_split_on_feature = _impl.best_split_on_feature
tree_apply = _impl.tree_apply
BACKEND: str = _impl.BACKEND
