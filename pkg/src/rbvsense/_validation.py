"""Input checking shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ArityError


def as_matrix(X, dtype=np.float64):
    """2-D finite float array; a 1-D input is treated as a single row."""
    X = np.asarray(X, dtype=dtype) if not hasattr(X, "iloc") else X
    if getattr(X, "ndim", 2) == 1:
        X = np.asarray(X).reshape(1, -1)
    return check_array(X, dtype=dtype, ensure_all_finite=True, ensure_min_samples=0)


def as_vector(x):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("input contains non-finite values")
    return v


def check_arity(got, expected, what="input"):
    if got != expected:
        raise ArityError(expected, got, what)


def as_binary_labels(y):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)
