"""Small input-validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def check_finite_array(x: np.ndarray, name: str = "array") -> np.ndarray:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def check_probability_rows(p: np.ndarray, atol: float = 1e-5) -> np.ndarray:
    """Validate an (N, C) matrix of per-row class distributions."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ValueError(f"expected an (N, C) probability matrix, got shape {p.shape}")
    check_finite_array(p, "class_probs")
    if np.any(p < 0):
        raise ValueError("class probabilities must be nonnegative")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > atol):
        raise ValueError("class probability rows must sum to 1")
    return p


def check_same_dim(*vectors, name: str = "embeddings") -> int:
    dims = {np.asarray(v).shape[-1] for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"{name} have mismatched dimensions: {sorted(dims)}")
    return dims.pop()
