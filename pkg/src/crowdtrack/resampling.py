"""Shared particle-weight utilities."""

from __future__ import annotations

import numpy as np


def normalize_log_weights(logw: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normalised weights from log-weights; ``(uniform, True)`` if all are -inf."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw) if logw.size else -np.inf
    if not np.isfinite(top):
        return np.full(logw.shape, 1.0 / max(logw.size, 1)), True
    w = np.exp(logw - top)
    return w / w.sum(), False


def effective_sample_size(w: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(w)))


def systematic_indices(w: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices by systematic resampling; sorted ascending."""
    cw = np.cumsum(w)
    cw /= cw[-1]
    u = (np.arange(n) + rng.random()) / n
    return np.minimum(np.searchsorted(cw, u, side="right"), len(w) - 1)


def systematic_counts(w: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return np.bincount(systematic_indices(w, n, rng), minlength=len(w))
