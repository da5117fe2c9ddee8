"""Input checks shared by the estimator and the array-level entry points."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import DomainError


def check_points(X, n_features: int | None = None) -> np.ndarray:
    """Validate an ``(n, d + 1)`` array of half-space points and return it as float64.

    Empty inputs are allowed (an empty cloud is a valid cloud).
    """
    X = check_array(X, dtype=np.float64, ensure_min_samples=0, ensure_all_finite=True)
    if X.shape[1] < 2:
        raise DomainError(f"half-space points need at least 2 columns, got {X.shape[1]}")
    if n_features is not None and X.shape[1] != n_features:
        raise DomainError(f"expected {n_features} columns, got {X.shape[1]}")
    if X.shape[0] and np.any(X[:, -1] <= 0):
        raise DomainError("the last column (ordinate) must be positive")
    return X


def check_fitted(estimator, attribute: str) -> None:
    check_is_fitted(estimator, attribute)
