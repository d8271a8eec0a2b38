"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_features(X, square: bool = False) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or infinity")
    if square and X.shape[0] != X.shape[1]:
        raise ValueError(f"expected a square kernel matrix, got {X.shape}")
    return X


def check_targets(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain NaN or infinity")
    return y


def check_same_length(*arrays) -> int:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"inconsistent lengths: {sorted(lengths)}")
    n = lengths.pop()
    if n == 0:
        raise ValueError("empty input")
    return n
