"""Non-learned reference policies."""

from __future__ import annotations

import numpy as np

from .geometry import AntennaLayout, UserPosition


def _check_k(k, n):
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")


def _top_k(keys, k) -> np.ndarray:
    # stable sort keeps the lower index first among equal keys
    order = np.argsort(keys, kind="stable")
    bits = np.zeros(len(keys), dtype=bool)
    bits[order[:k]] = True
    return bits


def nearest_antennas(layout: AntennaLayout, user: UserPosition, k: int) -> np.ndarray:
    """Activate the ``k`` antennas closest to the user (ties to the lower index)."""
    pos = np.asarray(layout.positions, dtype=float)
    _check_k(k, len(pos))
    dist = np.linalg.norm(pos - user.as_array(), axis=1)
    return _top_k(dist, k)


def top_k_refine(scores, k: int) -> np.ndarray:
    """Activate the ``k`` highest scores (ties to the lower index)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1:
        raise ValueError("scores must be a vector")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    _check_k(k, len(scores))
    return _top_k(-scores, k)
