"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np

from .errors import DataValidationError


def first_nonfinite(arr):
    """Index tuple of the first non-finite entry (C order), or None."""
    bad = ~np.isfinite(arr)
    if bad.any():
        return tuple(int(i) for i in np.argwhere(bad)[0])
    return None


def describe_index(idx):
    if len(idx) == 2:
        return f"row {idx[0]}, column {idx[1]}"
    return f"index {idx}"


def require_finite(arr, name="array", error=DataValidationError):
    idx = first_nonfinite(arr)
    if idx is not None:
        raise error(f"non-finite value in {name} at {describe_index(idx)}")


def as_matrix(X, name="X", dtype=np.float64):
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 2:
        raise DataValidationError(f"{name} must be 2-dimensional, got shape {X.shape}")
    return X
