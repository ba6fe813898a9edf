"""MinMax and robust feature scaling, as plain functions and as a transformer."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OneToOneFeatureMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_arity
from .data import Dataset, RbvRecord

SCALER_KINDS = ("minmax", "robust")


@dataclass(frozen=True)
class ScalerParams:
    """Fitted per-feature statistics.

    For ``minmax`` ``center`` holds the minimum and ``spread`` the range; for
    ``robust`` they hold the median and the interquartile range.
    """

    kind: str
    center: tuple
    spread: tuple

    def __post_init__(self):
        if self.kind not in SCALER_KINDS:
            raise ValueError(f"unknown scaler kind {self.kind!r}")
        if len(self.center) != len(self.spread):
            raise ValueError("center/spread length mismatch")
        if any(s < 0 for s in self.spread):
            raise ValueError("spread must be non-negative")

    @property
    def n_features(self):
        return len(self.center)

    def to_json(self):
        return json.dumps(
            {"kind": self.kind, "center": list(self.center), "spread": list(self.spread)},
            indent=1,
        ) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["kind"], tuple(float(v) for v in d["center"]),
                   tuple(float(v) for v in d["spread"]))


def fit_scaler_array(X, kind):
    X = as_matrix(X)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero records")
    if kind == "minmax":
        lo = X.min(axis=0)
        center, spread = lo, X.max(axis=0) - lo
    elif kind == "robust":
        # "linear" = interpolation between closest ranks
        q1, med, q3 = np.percentile(X, [25, 50, 75], axis=0, method="linear")
        center, spread = med, q3 - q1
    else:
        raise ValueError(f"unknown scaler kind {kind!r}")
    return ScalerParams(kind, tuple(map(float, center)), tuple(map(float, spread)))


def fit_scaler(dataset: Dataset, kind: str) -> ScalerParams:
    return fit_scaler_array(dataset.X, kind)


def apply_scaler_array(params: ScalerParams, X):
    X = as_matrix(X)
    check_arity(X.shape[1], params.n_features, "scaler")
    center = np.asarray(params.center)
    spread = np.asarray(params.spread)
    safe = np.where(spread > 0, spread, 1.0)
    out = (X - center) / safe
    # degenerate columns collapse to 0 for both kinds
    out[:, spread == 0] = 0.0
    return out


def apply_scaler(params: ScalerParams, record: RbvRecord) -> RbvRecord:
    row = apply_scaler_array(params, np.asarray(record.values, dtype=float)[None, :])[0]
    return RbvRecord(tuple(row), record.label)


class FeatureScaler(OneToOneFeatureMixin, TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`fit_scaler_array`.

    Parameters
    ----------
    kind : {"minmax", "robust"}, default="minmax"
        ``minmax`` maps each training feature onto [0, 1]; ``robust`` maps it
        to ``(x - median) / IQR``. Features with zero range map to 0.
    """

    def __init__(self, kind="minmax"):
        self.kind = kind

    def fit(self, X, y=None):
        X = as_matrix(X)
        self.params_ = fit_scaler_array(X, self.kind)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return apply_scaler_array(self.params_, X)
