"""Small input-validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np


def check_image_batch(X) -> np.ndarray:
    """Coerce to a finite float32 batch of shape (n, channels, height, width)."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 4:
        raise ValueError(
            f"expected images with shape (n, channels, height, width), got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ValueError("image batch is empty")
    if not np.all(np.isfinite(X)):
        raise ValueError("image batch contains non-finite values")
    return X


def check_feature_matrix(X, y=None):
    """Coerce to a finite float64 (n, d) matrix, optionally with labels."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError(
            f"labels shape {y.shape} does not match {X.shape[0]} samples"
        )
    return X, y
